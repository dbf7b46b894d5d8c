#pragma once

#include "tapsense/error.hpp"

#include <cmath>
#include <string>

namespace tapsense {

/// A point in screen coordinates, metres, origin at the bottom-left corner
/// of the device in portrait orientation.
struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point &) const = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct DeviceGeometry {
    double screen_width_m = 0.06917;
    double screen_height_m = 0.13784;
    Point bottom_mic{0.06917 / 2, 0.0};
    Point top_mic{0.06917 / 2, 0.13784};
    int sample_rate_hz = 44100;
    double air_temp_c = 23.0;

    bool contains(Point p) const {
        return p.x >= 0.0 && p.x <= screen_width_m && p.y >= 0.0 && p.y <= screen_height_m;
    }

    double mic_separation() const { return distance(bottom_mic, top_mic); }
};

inline void validate(const DeviceGeometry & g) {
    require(g.screen_width_m > 0.0 && g.screen_height_m > 0.0, "screen dimensions must be positive");
    require(!(g.bottom_mic == g.top_mic), "microphones must be distinct");
    require(g.sample_rate_hz > 0, "sample rate must be positive");
    require(g.air_temp_c >= 15.0 && g.air_temp_c <= 35.0, "air temperature must lie in [15, 35] C");
}

/// Phone-like device: mics centred on the bottom and top edges (137.84 x 69.17 mm).
inline DeviceGeometry phone_geometry() { return DeviceGeometry{}; }

/// Tablet-like device: one mic on the bottom edge, one on the right side (228.2 x 153.7 mm).
inline DeviceGeometry tablet_geometry() {
    DeviceGeometry g;
    g.screen_width_m = 0.1537;
    g.screen_height_m = 0.2282;
    g.bottom_mic = {g.screen_width_m / 2, 0.0};
    g.top_mic = {g.screen_width_m, g.screen_height_m / 2};
    return g;
}

/// Speed of sound in air, m/s, linear in temperature.
inline double speed_of_sound(double air_temp_c) { return 331.3 + 0.606 * air_temp_c; }

/// Arrival-time difference in samples, positive when the top mic hears the tap first.
inline double expected_delay(const DeviceGeometry & g, Point location) {
    if (!g.contains(location)) fail(ErrorKind::Precondition, "location outside the screen");
    const double c = speed_of_sound(g.air_temp_c);
    return (distance(location, g.bottom_mic) - distance(location, g.top_mic)) / c * g.sample_rate_hz;
}

/// Largest physically possible |delay| in samples.
inline double feasible_lag_bound(const DeviceGeometry & g) {
    return g.mic_separation() / speed_of_sound(g.air_temp_c) * g.sample_rate_hz;
}

} // namespace tapsense
