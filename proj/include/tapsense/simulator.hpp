#pragma once

// Synthetic two-microphone tap audio with ground truth. The tap waveform is a
// chain of decaying sinusoids (high burst, mid body, long low tail) plus a
// low-Q component in the 1.3-1.7 kHz region; a location-dependent resonance
// stands in for the way the glass colours the sound at each key.

#include "tapsense/audio_io.hpp"
#include "tapsense/dsp.hpp"
#include "tapsense/geometry.hpp"
#include "tapsense/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tapsense {

// ---------------------------------------------------------------------------
// Keyboard layouts

enum class LayoutKind { PinPad3x3, Qwerty26, Custom };
enum class Orientation { Portrait, Landscape };

struct KeyboardLayout {
    LayoutKind kind = LayoutKind::Custom;
    Orientation orientation = Orientation::Portrait;
    std::vector<std::pair<std::string, Point>> keys;

    const Point * find(const std::string & label) const {
        for (const auto & [l, p] : keys) {
            if (l == label) return &p;
        }
        return nullptr;
    }

    Point position(const std::string & label) const {
        const Point * p = find(label);
        if (!p) fail(ErrorKind::Precondition, "symbol '" + label + "' is not on the layout");
        return *p;
    }

    std::vector<std::string> labels() const {
        std::vector<std::string> out;
        for (const auto & k : keys) out.push_back(k.first);
        return out;
    }
};

inline void validate(const KeyboardLayout & layout, const DeviceGeometry & g) {
    for (size_t i = 0; i < layout.keys.size(); ++i) {
        require(g.contains(layout.keys[i].second), "key '" + layout.keys[i].first + "' lies outside the screen");
        for (size_t j = 0; j < i; ++j) require(layout.keys[i].first != layout.keys[j].first, "duplicate key label");
    }
}

namespace detail {

// Layouts are built in the user's view of the screen (u right, v up) and
// mapped to device coordinates; landscape turns the device a quarter turn.
struct ViewFrame {
    double width, height;
    Orientation orientation;
    const DeviceGeometry * g;

    Point to_device(double u, double v) const {
        if (orientation == Orientation::Portrait) return {u, v};
        return {g->screen_width_m - v, u};
    }
};

inline ViewFrame view_frame(const DeviceGeometry & g, Orientation o) {
    if (o == Orientation::Portrait) return {g.screen_width_m, g.screen_height_m, o, &g};
    return {g.screen_height_m, g.screen_width_m, o, &g};
}

} // namespace detail

/// Digits 1-9 on a 3x3 grid centred in the lower half of the view, pitch =
/// view width / 4. In landscape that would overflow the lower half, so the
/// pitch is capped at view height / 5.
inline KeyboardLayout pin_pad_layout(const DeviceGeometry & g, Orientation o = Orientation::Portrait) {
    const auto view = detail::view_frame(g, o);
    const double pitch = std::min(view.width / 4.0, view.height / 5.0);
    KeyboardLayout layout{LayoutKind::PinPad3x3, o, {}};
    for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) {
            const double u = view.width / 2.0 + (col - 1) * pitch;
            const double v = view.height / 4.0 + (1 - row) * pitch;
            layout.keys.emplace_back(std::to_string(row * 3 + col + 1), view.to_device(u, v));
        }
    }
    return layout;
}

/// Three staggered QWERTY rows in the lower third of the view.
inline KeyboardLayout qwerty_layout(const DeviceGeometry & g, Orientation o = Orientation::Portrait) {
    const auto view = detail::view_frame(g, o);
    const double pitch = view.width / 10.0;
    const double row_h = view.height / 9.0;
    const char * rows[3] = {"qwertyuiop", "asdfghjkl", "zxcvbnm"};
    const double stagger[3] = {0.0, 0.5, 1.5};
    KeyboardLayout layout{LayoutKind::Qwerty26, o, {}};
    for (int r = 0; r < 3; ++r) {
        const double v = view.height / 3.0 - (r + 0.5) * row_h;
        for (int c = 0; rows[r][c] != '\0'; ++c) {
            const double u = (stagger[r] + c + 0.5) * pitch;
            layout.keys.emplace_back(std::string(1, rows[r][c]), view.to_device(u, v));
        }
    }
    return layout;
}

// ---------------------------------------------------------------------------
// Tap synthesis

struct TapSynthConfig {
    // Decaying sinusoid stages, concatenated: burst, then mid, then tail.
    double burst_hz = 8250.0;
    int burst_len = 60;
    double burst_decay = 0.03;  // per-sample exponential rate
    double burst_amp = 1.0;
    double mid_hz = 4200.0;
    int mid_len = 200;
    double mid_decay = 0.012;
    double mid_amp = 0.5;
    double tail_hz = 65.0;
    int tail_len = 1500;
    double tail_decay = 0.002;
    double tail_amp = 0.3;
    // Runs in parallel with the burst and mid stages.
    double body_hz = 1500.0;
    int body_len = 260;
    double body_decay = 0.015;
    double body_amp = 0.4;

    double level_at_1cm = 0.5;      // peak gain at 1 cm from a mic; falls as 1/distance
    double top_attenuation = 1.0;   // extra per-channel gain, e.g. a finger covering a mic
    double bottom_attenuation = 1.0;
    double snr_db = 20.0;           // +infinity disables noise
    bool location_fingerprint = true;
    double fingerprint_cell_m = 0.004;
    double fingerprint_mix = 1.0;
    std::optional<double> subject_effect;  // relative perturbation of the fingerprint per subject
    std::string subject_id = "s0";
    double variability = 0.3;       // per-tap relative jitter of stage amplitudes
    double frequency_variability = 0.1;   // per-tap relative jitter of stage frequencies
    double force_range_db = 6.0;    // per-tap overall strength, uniform in +-range dB
    int onset_jitter = 256;         // sessions: uniform onset jitter in samples
    uint64_t seed = 1;
};

inline void validate(const TapSynthConfig & c, int sample_rate_hz) {
    const double nyquist = sample_rate_hz / 2.0;
    for (double f : {c.burst_hz, c.mid_hz, c.tail_hz, c.body_hz}) require(f > 0.0 && f < nyquist, "stage frequency must lie below nyquist");
    for (int n : {c.burst_len, c.mid_len, c.tail_len, c.body_len}) require(n > 0, "stage lengths must be positive");
    require(c.level_at_1cm > 0.0, "level must be positive");
    require(c.top_attenuation > 0.0 && c.top_attenuation <= 1.0 && c.bottom_attenuation > 0.0 && c.bottom_attenuation <= 1.0,
            "channel attenuation must lie in (0, 1]");
    require(c.fingerprint_cell_m > 0.0, "fingerprint cell size must be positive");
    require(c.variability >= 0.0 && c.variability < 1.0, "variability must lie in [0, 1)");
    require(c.frequency_variability >= 0.0 && c.frequency_variability < 0.5, "frequency variability must lie in [0, 0.5)");
    require(c.force_range_db >= 0.0 && c.force_range_db <= 40.0, "force range must lie in [0, 40] dB");
    require(c.onset_jitter >= 0, "onset jitter must be non-negative");
    if (c.subject_effect) require(*c.subject_effect >= 0.0 && *c.subject_effect <= 1.0, "subject effect must lie in [0, 1]");
}

struct TapGroundTruth {
    double onset_bottom = 0.0;  // fractional sample index of arrival at each mic
    double onset_top = 0.0;
    double true_delay = 0.0;    // positive when the top mic hears the tap first
    Point location;
    std::string label;
};

struct SynthesizedTap {
    std::vector<double> bottom;
    std::vector<double> top;
    TapGroundTruth truth;
};

struct Fingerprint {
    double centre_hz;
    double q;
};

namespace detail {

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double hash_unit(uint64_t h) { return double(h >> 11) * 0x1.0p-53; }

inline uint64_t hash_string(const std::string & s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

inline double stage_len_total(const TapSynthConfig & c) { return double(c.burst_len + c.mid_len + c.tail_len); }

} // namespace detail

/// Resonance parameters for the grid cell containing `location`, optionally
/// perturbed per subject.
inline Fingerprint fingerprint_for(Point location, const TapSynthConfig & config) {
    const auto cx = int64_t(std::floor(location.x / config.fingerprint_cell_m));
    const auto cy = int64_t(std::floor(location.y / config.fingerprint_cell_m));
    const uint64_t cell = detail::mix64(uint64_t(cx) * 0x9e3779b97f4a7c15ULL ^ detail::mix64(uint64_t(cy) + 0x632be59bd9b4e019ULL));
    Fingerprint fp{2000.0 + 4000.0 * detail::hash_unit(detail::mix64(cell ^ 1)),
                   2.0 + 6.0 * detail::hash_unit(detail::mix64(cell ^ 2))};
    if (config.subject_effect && *config.subject_effect > 0.0) {
        const uint64_t s = detail::mix64(cell ^ detail::hash_string(config.subject_id));
        const double uf = 2.0 * detail::hash_unit(detail::mix64(s ^ 3)) - 1.0;
        const double uq = 2.0 * detail::hash_unit(detail::mix64(s ^ 4)) - 1.0;
        fp.centre_hz *= 1.0 + *config.subject_effect * uf;
        fp.q *= 1.0 + *config.subject_effect * uq;
    }
    return fp;
}

/// Unit-peak-gain resonant band-pass biquad.
inline Biquad resonator(double centre_hz, double q, double sample_rate_hz) {
    const double w0 = 2.0 * std::numbers::pi * centre_hz / sample_rate_hz;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    return Biquad{alpha / a0, 0.0, -alpha / a0, -2.0 * std::cos(w0) / a0, (1.0 - alpha) / a0};
}

/// Noiseless source waveform at the tap point, before propagation.
inline std::vector<double> tap_waveform(const TapSynthConfig & c, int sample_rate_hz, Rng & rng) {
    auto jitter = [&](double v, double var) { return v * (1.0 + var * (2.0 * rng.uniform() - 1.0)); };
    const size_t n = size_t(detail::stage_len_total(c));
    std::vector<double> w(n, 0.0);
    const double two_pi_over_fs = 2.0 * std::numbers::pi / sample_rate_hz;

    auto add_stage = [&](size_t start, int len, double hz, double decay, double amp) {
        const double f = jitter(hz, c.frequency_variability), a = jitter(amp, c.variability);
        for (int i = 0; i < len && start + size_t(i) < n; ++i) {
            w[start + size_t(i)] += a * std::exp(-decay * i) * std::sin(two_pi_over_fs * f * i);
        }
    };
    add_stage(0, c.burst_len, c.burst_hz, c.burst_decay, c.burst_amp);
    add_stage(size_t(c.burst_len), c.mid_len, c.mid_hz, c.mid_decay, c.mid_amp);
    add_stage(size_t(c.burst_len + c.mid_len), c.tail_len, c.tail_hz, c.tail_decay, c.tail_amp);
    add_stage(0, c.body_len, c.body_hz, c.body_decay, c.body_amp);
    // how hard the finger hit: one gain for the whole tap
    const double force = std::pow(10.0, c.force_range_db * (2.0 * rng.uniform() - 1.0) / 20.0);
    for (double & v : w) v *= force;
    return w;
}

inline constexpr int kSincHalfWidth = 16;  // 33 taps

/// Adds gain * w(t - delay) into out, where w is sampled at integers and the
/// fractional part is handled by a Blackman-windowed sinc.
inline void add_delayed(std::vector<double> & out, std::span<const double> w, double delay, double gain) {
    const double base = std::floor(delay);
    const double frac = delay - base;
    double taps[2 * kSincHalfWidth + 1];
    double sum = 0.0;
    for (int j = -kSincHalfWidth; j <= kSincHalfWidth; ++j) {
        const double t = j - frac;
        const double sinc = t == 0.0 ? 1.0 : std::sin(std::numbers::pi * t) / (std::numbers::pi * t);
        const double span = kSincHalfWidth + 1.0;
        const double win = 0.42 + 0.5 * std::cos(std::numbers::pi * t / span) + 0.08 * std::cos(2.0 * std::numbers::pi * t / span);
        taps[j + kSincHalfWidth] = sinc * win;
        sum += sinc * win;
    }
    // out[m] = sum_j w[m - base - j] * h(j - frac)
    const long ibase = long(base);
    for (size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) continue;
        for (int j = -kSincHalfWidth; j <= kSincHalfWidth; ++j) {
            const long m = long(k) + ibase + j;
            if (m >= 0 && m < long(out.size())) out[size_t(m)] += gain * w[k] * taps[j + kSincHalfWidth] / sum;
        }
    }
}

inline constexpr int kTapPreRoll = 64;

/// Gain applied to a tap heard at `d` metres.
inline double propagation_gain(double d, const TapSynthConfig & c) { return c.level_at_1cm * 0.01 / std::max(d, 0.01); }

namespace detail {

struct PropagatedTap {
    std::vector<double> source;   // coloured source waveform
    double delay_bottom, delay_top;
    double gain_bottom, gain_top;
};

inline PropagatedTap propagate(const DeviceGeometry & g, Point location, const TapSynthConfig & c, Rng & rng) {
    if (!g.contains(location)) fail(ErrorKind::Precondition, "tap location outside the screen");
    PropagatedTap p;
    p.source = tap_waveform(c, g.sample_rate_hz, rng);
    if (c.location_fingerprint) {
        const auto fp = fingerprint_for(location, c);
        const auto coloured = apply_biquad(resonator(fp.centre_hz, fp.q, g.sample_rate_hz), p.source);
        for (size_t i = 0; i < p.source.size(); ++i) p.source[i] += c.fingerprint_mix * coloured[i];
    }
    const double speed = speed_of_sound(g.air_temp_c);
    const double db = distance(location, g.bottom_mic), dt = distance(location, g.top_mic);
    p.delay_bottom = db / speed * g.sample_rate_hz;
    p.delay_top = dt / speed * g.sample_rate_hz;
    p.gain_bottom = propagation_gain(db, c) * c.bottom_attenuation;
    p.gain_top = propagation_gain(dt, c) * c.top_attenuation;
    return p;
}

inline double noise_sigma_for(double signal_rms, double snr_db) {
    if (!std::isfinite(snr_db) && snr_db > 0) return 0.0;
    return signal_rms / std::pow(10.0, snr_db / 20.0);
}

} // namespace detail

/// One tap as a two-channel segment; emission happens at sample kTapPreRoll.
/// Noise is white Gaussian, scaled so the mean power of both channels over
/// the 256 samples after arrival sits snr_db above it.
inline SynthesizedTap synthesize_tap(const DeviceGeometry & g, Point location, const TapSynthConfig & c,
                                     const std::string & label = {}) {
    validate(g);
    validate(c, g.sample_rate_hz);
    Rng rng(c.seed);
    auto p = detail::propagate(g, location, c, rng);

    const size_t len = size_t(kTapPreRoll) + p.source.size() + size_t(std::ceil(std::max(p.delay_bottom, p.delay_top))) + 64;
    SynthesizedTap tap;
    tap.bottom.assign(len, 0.0);
    tap.top.assign(len, 0.0);
    add_delayed(tap.bottom, p.source, kTapPreRoll + p.delay_bottom, p.gain_bottom);
    add_delayed(tap.top, p.source, kTapPreRoll + p.delay_top, p.gain_top);

    tap.truth.onset_bottom = kTapPreRoll + p.delay_bottom;
    tap.truth.onset_top = kTapPreRoll + p.delay_top;
    tap.truth.true_delay = p.delay_bottom - p.delay_top;
    tap.truth.location = location;
    tap.truth.label = label;

    const double sigma = [&] {
        if (!(c.snr_db < std::numeric_limits<double>::infinity())) return 0.0;
        auto window_power = [](const std::vector<double> & ch, double onset) {
            const size_t b = size_t(std::floor(onset));
            const size_t e = std::min(ch.size(), b + 256);
            return energy(std::span<const double>(ch).subspan(b, e - b)) / 256.0;
        };
        const double power = 0.5 * (window_power(tap.bottom, tap.truth.onset_bottom) + window_power(tap.top, tap.truth.onset_top));
        return detail::noise_sigma_for(std::sqrt(power), c.snr_db);
    }();
    if (sigma > 0.0) {
        for (auto * ch : {&tap.bottom, &tap.top}) {
            for (double & v : *ch) v += sigma * rng.normal();
        }
    }
    return tap;
}

// ---------------------------------------------------------------------------
// Sessions

struct SynthesizedSession {
    AudioRecording recording;
    std::vector<TapLabel> labels;
    std::vector<TapGroundTruth> truths;
};

inline constexpr size_t kSessionLead = 4000;
inline constexpr size_t kSessionTrail = 2500;

/// Background noise level for a session: the SNR reference is a noiseless tap
/// at the centroid of the layout's keys.
inline double session_noise_sigma(const DeviceGeometry & g, const KeyboardLayout & layout, const TapSynthConfig & c) {
    if (!(c.snr_db < std::numeric_limits<double>::infinity())) return 0.0;
    Point centre{0, 0};
    for (const auto & k : layout.keys) {
        centre.x += k.second.x / double(layout.keys.size());
        centre.y += k.second.y / double(layout.keys.size());
    }
    TapSynthConfig ref = c;
    ref.snr_db = std::numeric_limits<double>::infinity();
    ref.variability = 0.0;
    ref.frequency_variability = 0.0;
    ref.force_range_db = 0.0;
    ref.location_fingerprint = false;
    const auto tap = synthesize_tap(g, centre, ref);
    auto window_power = [](const std::vector<double> & ch, double onset) {
        return energy(std::span<const double>(ch).subspan(size_t(std::floor(onset)), 256)) / 256.0;
    };
    const double power = 0.5 * (window_power(tap.bottom, tap.truth.onset_bottom) + window_power(tap.top, tap.truth.onset_top));
    return detail::noise_sigma_for(std::sqrt(power), c.snr_db);
}

/// Taps for each symbol of `text`, emitted at lead + i * gap + jitter, on top
/// of continuous background noise. Labels mark the first arrival at either mic.
inline SynthesizedSession synthesize_session(const DeviceGeometry & g, const KeyboardLayout & layout,
                                             const std::vector<std::string> & text, size_t inter_tap_gap,
                                             const TapSynthConfig & c, const std::string & session_id = "session") {
    validate(g);
    validate(c, g.sample_rate_hz);
    require(inter_tap_gap >= 2000, "inter-tap gap must be at least 2000 samples");
    for (const auto & s : text) (void)layout.position(s);

    const size_t tap_span = size_t(detail::stage_len_total(c)) + 128;
    const size_t length = kSessionLead + text.size() * inter_tap_gap + tap_span + kSessionTrail;

    SynthesizedSession session;
    auto & rec = session.recording;
    rec.sample_rate_hz = g.sample_rate_hz;
    rec.channels.assign(2, std::vector<double>(length, 0.0));
    rec.channel_roles = default_roles(2);
    auto & bottom = rec.channels[0];
    auto & top = rec.channels[1];

    Rng session_rng(derive_seed(c.seed, 0x5e55));
    for (size_t i = 0; i < text.size(); ++i) {
        const Point loc = layout.position(text[i]);
        const double emission = double(kSessionLead + i * inter_tap_gap) +
                                (c.onset_jitter > 0 ? double(session_rng.below(uint64_t(c.onset_jitter))) : 0.0);
        Rng tap_rng(derive_seed(c.seed, i + 1));
        auto p = detail::propagate(g, loc, c, tap_rng);
        add_delayed(bottom, p.source, emission + p.delay_bottom, p.gain_bottom);
        add_delayed(top, p.source, emission + p.delay_top, p.gain_top);

        TapGroundTruth truth{emission + p.delay_bottom, emission + p.delay_top, p.delay_bottom - p.delay_top, loc, text[i]};
        session.labels.push_back({size_t(std::floor(std::min(truth.onset_bottom, truth.onset_top))), text[i], c.subject_id, session_id});
        session.truths.push_back(truth);
    }

    const double sigma = session_noise_sigma(g, layout, c);
    if (sigma > 0.0) {
        Rng noise_rng(derive_seed(c.seed, 0x0015e));
        for (auto * ch : {&bottom, &top}) {
            for (double & v : *ch) v += sigma * noise_rng.normal();
        }
    }
    for (auto * ch : {&bottom, &top}) {
        for (double & v : *ch) v = std::clamp(v, -1.0, 1.0);
    }
    return session;
}

// ---------------------------------------------------------------------------
// Iso-delay maps

/// Integer-rounded expected delay on a regular grid; row = y index, column = x index.
inline std::vector<std::vector<int>> tdoa_map(const DeviceGeometry & g, double grid_step_m) {
    require(grid_step_m > 0.0, "grid step must be positive");
    // Small slack so grid points that land on the far edge are not lost to rounding.
    const size_t nx = size_t(std::floor(g.screen_width_m / grid_step_m + 1e-9)) + 1;
    const size_t ny = size_t(std::floor(g.screen_height_m / grid_step_m + 1e-9)) + 1;
    std::vector<std::vector<int>> map(ny, std::vector<int>(nx));
    for (size_t iy = 0; iy < ny; ++iy) {
        for (size_t ix = 0; ix < nx; ++ix) {
            const Point p{std::min(double(ix) * grid_step_m, g.screen_width_m), std::min(double(iy) * grid_step_m, g.screen_height_m)};
            map[iy][ix] = int(std::lround(expected_delay(g, p)));
        }
    }
    return map;
}

} // namespace tapsense
