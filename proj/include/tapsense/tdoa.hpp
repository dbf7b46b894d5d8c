#pragma once

// Arrival-time difference between the top and bottom microphones.
// Convention: positive lag = the top microphone received the tap first.

#include "tapsense/dsp.hpp"
#include "tapsense/geometry.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace tapsense {

enum class DelayMethod { CC, GCC_PHAT, GCC_SCOT, GCC_ROTH, GCC_ML, ASDF, THRESHOLD };

inline const char * to_string(DelayMethod m) {
    switch (m) {
        case DelayMethod::CC:        return "cc";
        case DelayMethod::GCC_PHAT:  return "gcc-phat";
        case DelayMethod::GCC_SCOT:  return "gcc-scot";
        case DelayMethod::GCC_ROTH:  return "gcc-roth";
        case DelayMethod::GCC_ML:    return "gcc-ml";
        case DelayMethod::ASDF:      return "asdf";
        case DelayMethod::THRESHOLD: return "threshold";
    }
    return "?";
}

inline std::optional<DelayMethod> parse_delay_method(const std::string & s) {
    for (auto m : {DelayMethod::CC, DelayMethod::GCC_PHAT, DelayMethod::GCC_SCOT, DelayMethod::GCC_ROTH,
                   DelayMethod::GCC_ML, DelayMethod::ASDF, DelayMethod::THRESHOLD}) {
        if (s == to_string(m)) return m;
    }
    return std::nullopt;
}

struct TdoaConfig {
    int max_lag = 32;
    double band_low_hz = 1300.0;
    double band_high_hz = 1700.0;
    bool interpolate = true;
    double regularization = 1e-8;
    double threshold_k = 6.0;         // THRESHOLD: multiple of the noise RMS
    size_t threshold_noise_window = 64;  // THRESHOLD: leading samples used for the noise RMS
    double feasibility_margin = 2.0;  // samples of slack over the geometric bound
    int smoothing_bins = 2;           // SCOT/ML: half-width of the spectral averaging used for coherence
};

inline void validate(const TdoaConfig & c, int sample_rate_hz) {
    require(c.max_lag >= 1, "max_lag must be at least 1");
    require(c.band_low_hz > 0 && c.band_low_hz < c.band_high_hz && c.band_high_hz < sample_rate_hz / 2.0,
            "prefilter band must lie inside (0, nyquist)");
    require(c.regularization > 0.0, "regularization must be positive");
}

struct DelayEstimate {
    double lag_samples = 0.0;
    DelayMethod method = DelayMethod::CC;
    double peak_value = 0.0;
    bool feasible = true;
};

namespace detail {

// Offsets this small come from edge truncation and rounding, not from a real
// fractional delay; an integer-delay pair should report the integer.
inline constexpr double kMinSubsampleOffset = 1e-3;

inline double refine_peak(const std::vector<double> & values, size_t idx, bool interpolate) {
    if (!interpolate || idx == 0 || idx + 1 >= values.size()) return 0.0;
    const double off = parabolic_offset(values[idx - 1], values[idx], values[idx + 1]);
    return std::abs(off) < kMinSubsampleOffset ? 0.0 : off;
}

// Index of the maximum of `values` (indexed by lag + max_lag); ties go to the
// smallest |lag|, so that swapping channels mirrors the choice.
inline size_t best_index(const std::vector<double> & values, int max_lag, bool maximize) {
    size_t best = size_t(max_lag);
    for (size_t i = 0; i < values.size(); ++i) {
        const double v = maximize ? values[i] : -values[i];
        const double b = maximize ? values[best] : -values[best];
        const long li = long(i) - max_lag, lb = long(best) - max_lag;
        if (v > b || (v == b && (std::labs(li) < std::labs(lb) || (std::labs(li) == std::labs(lb) && li < lb)))) best = i;
    }
    return best;
}

inline std::vector<double> smooth_bins(const std::vector<double> & x, int half) {
    std::vector<double> out(x.size());
    for (size_t k = 0; k < x.size(); ++k) {
        double s = 0.0;
        int n = 0;
        for (int d = -half; d <= half; ++d) {
            const long j = long(k) + d;
            if (j >= 0 && j < long(x.size())) {
                s += x[size_t(j)];
                ++n;
            }
        }
        out[k] = s / n;
    }
    return out;
}

inline std::vector<Complex> smooth_bins(const std::vector<Complex> & x, int half) {
    std::vector<double> re(x.size()), im(x.size());
    for (size_t k = 0; k < x.size(); ++k) {
        re[k] = x[k].real();
        im[k] = x[k].imag();
    }
    re = smooth_bins(re, half);
    im = smooth_bins(im, half);
    std::vector<Complex> out(x.size());
    for (size_t k = 0; k < x.size(); ++k) out[k] = {re[k], im[k]};
    return out;
}

/// Generalized cross-correlation over lags -max_lag..max_lag, normalized so
/// the values lie in [-1, 1].
inline std::vector<double> gcc(std::span<const double> top, std::span<const double> bottom, DelayMethod method, const TdoaConfig & c) {
    const size_t nfft = next_pow2(2 * top.size());
    const auto xt = rfft(top, nfft);
    const auto xb = rfft(bottom, nfft);
    const size_t nb = xt.size();

    std::vector<Complex> cross(nb);
    std::vector<double> stt(nb), sbb(nb);
    for (size_t k = 0; k < nb; ++k) {
        cross[k] = std::conj(xt[k]) * xb[k];
        stt[k] = std::norm(xt[k]);
        sbb[k] = std::norm(xb[k]);
    }

    // The floor is relative to the largest term of each weighting's
    // denominator, so a gain on either channel cannot shift the estimate.
    auto peak_of = [](const auto & v, auto f) {
        double m = 0.0;
        for (const auto & e : v) m = std::max(m, f(e));
        return m;
    };
    const double cross_peak = peak_of(cross, [](Complex z) { return std::abs(z); });
    std::vector<double> weight(nb);
    double r = c.regularization * cross_peak;
    switch (method) {
        case DelayMethod::GCC_PHAT:
            for (size_t k = 0; k < nb; ++k) weight[k] = 1.0 / (std::abs(cross[k]) + r);
            break;
        case DelayMethod::GCC_ROTH:
            r = c.regularization * peak_of(stt, [](double v) { return v; });
            for (size_t k = 0; k < nb; ++k) weight[k] = 1.0 / (stt[k] + r);
            break;
        case DelayMethod::GCC_SCOT:
        case DelayMethod::GCC_ML: {
            const auto stt_s = smooth_bins(stt, c.smoothing_bins);
            const auto sbb_s = smooth_bins(sbb, c.smoothing_bins);
            const auto cross_s = smooth_bins(cross, c.smoothing_bins);
            for (size_t k = 0; k < nb; ++k) {
                if (method == DelayMethod::GCC_SCOT) {
                    weight[k] = 1.0 / (std::sqrt(stt_s[k] * sbb_s[k]) + r);
                } else {
                    const double denom = stt_s[k] * sbb_s[k];
                    double coh = denom > 0.0 ? std::norm(cross_s[k]) / denom : 0.0;
                    coh = std::clamp(coh, 0.0, 1.0 - 1e-12);
                    weight[k] = coh / ((1.0 - coh) * std::abs(cross[k]) + r);
                }
            }
            break;
        }
        default:
            for (size_t k = 0; k < nb; ++k) weight[k] = 1.0;
    }

    std::vector<Complex> weighted(nb);
    double total = 0.0;
    for (size_t k = 0; k < nb; ++k) {
        weighted[k] = weight[k] * cross[k];
        const double mag = std::abs(weighted[k]);
        total += (k == 0 || k == nb - 1) ? mag : 2.0 * mag;
    }
    const auto corr = irfft(weighted, nfft);
    const double norm = total / double(nfft);

    std::vector<double> values(size_t(2 * c.max_lag + 1), 0.0);
    for (int lag = -c.max_lag; lag <= c.max_lag; ++lag) {
        const size_t idx = size_t((long(nfft) + lag) % long(nfft));
        values[size_t(lag + c.max_lag)] = norm > 0.0 ? corr[idx] / norm : 0.0;
    }
    return values;
}

inline std::vector<double> asdf(std::span<const double> top, std::span<const double> bottom, int max_lag) {
    // Unit-RMS channels so a gain difference between mics cannot move the minimum.
    const double rt = rms(top), rb = rms(bottom);
    std::vector<double> values(size_t(2 * max_lag + 1));
    const long n = long(top.size());
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        const long begin = std::max(0L, -long(lag));
        const long end = std::min(n, n - lag);
        double s = 0.0;
        for (long i = begin; i < end; ++i) {
            const double d = top[size_t(i)] / rt - bottom[size_t(i + lag)] / rb;
            s += d * d;
        }
        values[size_t(lag + max_lag)] = s / double(end - begin);
    }
    return values;
}

inline std::optional<size_t> first_crossing(std::span<const double> x, const TdoaConfig & c) {
    const size_t w = std::min(c.threshold_noise_window, x.size());
    double noise = rms(x.subspan(0, w));
    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    if (noise == 0.0) noise = 1e-3 * peak / c.threshold_k;
    const double level = c.threshold_k * noise;
    for (size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) > level) return i;
    }
    return std::nullopt;
}

} // namespace detail

/// Band-passes both channels, then applies the chosen estimator. When a
/// geometric bound (samples) is supplied, estimates beyond bound + margin are
/// flagged infeasible.
inline DelayEstimate estimate_delay(std::span<const double> top, std::span<const double> bottom, DelayMethod method,
                                    const TdoaConfig & config, int sample_rate_hz,
                                    std::optional<double> geometric_bound = std::nullopt) {
    validate(config, sample_rate_hz);
    require(top.size() == bottom.size(), "channels must have equal length");
    require(top.size() >= 256, "delay estimation needs at least 256 samples");
    require(size_t(config.max_lag) < top.size(), "max_lag must be smaller than the segment");

    const auto ft = butterworth_bandpass(top, sample_rate_hz, config.band_low_hz, config.band_high_hz);
    const auto fb = butterworth_bandpass(bottom, sample_rate_hz, config.band_low_hz, config.band_high_hz);
    if (energy(ft) == 0.0 || energy(fb) == 0.0) fail(ErrorKind::NoSignal, "channel is silent after band-pass filtering");

    DelayEstimate est;
    est.method = method;
    const int L = config.max_lag;

    switch (method) {
        case DelayMethod::CC: {
            const auto cc = cross_correlate(ft, fb, L);
            const size_t i = detail::best_index(cc.values, L, true);
            est.lag_samples = double(long(i) - L) + detail::refine_peak(cc.values, i, config.interpolate);
            est.peak_value = cc.values[i];
            break;
        }
        case DelayMethod::GCC_PHAT:
        case DelayMethod::GCC_SCOT:
        case DelayMethod::GCC_ROTH:
        case DelayMethod::GCC_ML: {
            const auto values = detail::gcc(ft, fb, method, config);
            const size_t i = detail::best_index(values, L, true);
            est.lag_samples = double(long(i) - L) + detail::refine_peak(values, i, config.interpolate);
            est.peak_value = values[i];
            break;
        }
        case DelayMethod::ASDF: {
            const auto values = detail::asdf(ft, fb, L);
            const size_t i = detail::best_index(values, L, false);
            std::vector<double> neg(values.size());
            for (size_t k = 0; k < values.size(); ++k) neg[k] = -values[k];
            est.lag_samples = double(long(i) - L) + detail::refine_peak(neg, i, config.interpolate);
            est.peak_value = values[i];
            break;
        }
        case DelayMethod::THRESHOLD: {
            const auto ct = detail::first_crossing(ft, config);
            const auto cb = detail::first_crossing(fb, config);
            if (!ct || !cb) fail(ErrorKind::NoSignal, "no threshold crossing");
            const double lag = double(*cb) - double(*ct);
            est.lag_samples = std::clamp(lag, double(-L), double(L));
            est.peak_value = 1.0;
            if (lag != est.lag_samples) est.feasible = false;
            break;
        }
    }

    if (geometric_bound && std::abs(est.lag_samples) > *geometric_bound + config.feasibility_margin) est.feasible = false;
    return est;
}

inline DelayEstimate estimate_delay(std::span<const double> top, std::span<const double> bottom, DelayMethod method,
                                    const TdoaConfig & config, int sample_rate_hz, const DeviceGeometry & geometry) {
    return estimate_delay(top, bottom, method, config, sample_rate_hz, feasible_lag_bound(geometry));
}

} // namespace tapsense
