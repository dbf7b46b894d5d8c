#pragma once

// Signal-processing primitives shared by detection, delay estimation and
// feature extraction.

#include "tapsense/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

namespace tapsense {

using Complex = std::complex<double>;

struct Signal {
    std::vector<double> samples;
    int sample_rate_hz = 44100;

    size_t size() const { return samples.size(); }
};

inline void validate(const Signal & s) {
    require(s.sample_rate_hz > 0, "sample rate must be positive");
    for (double v : s.samples) require(std::isfinite(v), "signal contains non-finite values");
}

// ---------------------------------------------------------------------------
// FFT plumbing. FFTW planning is not thread safe, so planning and destruction
// go through one mutex; each thread keeps its own plans and buffers.

namespace detail {

inline std::mutex & fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

class RealFftPlan {
public:
    explicit RealFftPlan(size_t n) : n_(n) {
        in_ = fftw_alloc_real(n);
        out_ = fftw_alloc_complex(n / 2 + 1);
        std::lock_guard lock(fftw_planner_mutex());
        forward_ = fftw_plan_dft_r2c_1d(int(n), in_, out_, FFTW_ESTIMATE);
        backward_ = fftw_plan_dft_c2r_1d(int(n), out_, in_, FFTW_ESTIMATE);
    }
    ~RealFftPlan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
        fftw_free(in_);
        fftw_free(out_);
    }
    RealFftPlan(const RealFftPlan &) = delete;
    RealFftPlan & operator=(const RealFftPlan &) = delete;

    std::vector<Complex> forward(std::span<const double> x) {
        std::fill(in_, in_ + n_, 0.0);
        std::copy_n(x.begin(), std::min(x.size(), n_), in_);
        fftw_execute(forward_);
        std::vector<Complex> result(n_ / 2 + 1);
        for (size_t k = 0; k < result.size(); ++k) result[k] = Complex(out_[k][0], out_[k][1]);
        return result;
    }

    // c2r destroys its input, hence the copy into the owned buffer.
    std::vector<double> inverse(std::span<const Complex> spectrum) {
        for (size_t k = 0; k < n_ / 2 + 1; ++k) {
            out_[k][0] = spectrum[k].real();
            out_[k][1] = spectrum[k].imag();
        }
        fftw_execute(backward_);
        std::vector<double> result(in_, in_ + n_);
        const double scale = 1.0 / double(n_);
        for (double & v : result) v *= scale;
        return result;
    }

private:
    size_t n_;
    double * in_;
    fftw_complex * out_;
    fftw_plan forward_;
    fftw_plan backward_;
};

inline RealFftPlan & real_fft_plan(size_t n) {
    thread_local std::map<size_t, std::unique_ptr<RealFftPlan>> plans;
    auto & slot = plans[n];
    if (!slot) slot = std::make_unique<RealFftPlan>(n);
    return *slot;
}

} // namespace detail

/// Half spectrum (n/2 + 1 bins) of x zero-padded or truncated to n.
inline std::vector<Complex> rfft(std::span<const double> x, size_t n) {
    require(n >= 2, "fft size must be at least 2");
    return detail::real_fft_plan(n).forward(x);
}

/// Inverse of rfft, normalized so irfft(rfft(x, n), n) == x.
inline std::vector<double> irfft(std::span<const Complex> half_spectrum, size_t n) {
    require(half_spectrum.size() == n / 2 + 1, "half spectrum size mismatch");
    return detail::real_fft_plan(n).inverse(half_spectrum);
}

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// ---------------------------------------------------------------------------
// Short-time spectra

struct SpectralFrame {
    long start_sample = 0;
    std::vector<double> magnitudes;
    double bin_hz = 0.0;
};

/// Periodic Hann window.
inline std::vector<double> hann_window(size_t n) {
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
    return w;
}

inline size_t stft_frame_count(size_t length, size_t window_size, size_t hop) {
    return length < window_size ? 0 : (length - window_size) / hop + 1;
}

inline std::vector<SpectralFrame> stft(std::span<const double> samples, int sample_rate_hz, size_t window_size, size_t hop) {
    require(is_pow2(window_size), "stft window must be a power of two");
    require(hop > 0 && hop <= window_size, "stft hop must be in (0, window]");
    require(sample_rate_hz > 0, "sample rate must be positive");
    if (samples.size() < window_size) fail(ErrorKind::Precondition, "signal shorter than one stft window");

    const auto window = hann_window(window_size);
    const size_t n_frames = stft_frame_count(samples.size(), window_size, hop);
    const double bin_hz = double(sample_rate_hz) / double(window_size);

    std::vector<SpectralFrame> frames(n_frames);
    std::vector<double> buf(window_size);
    for (size_t f = 0; f < n_frames; ++f) {
        const size_t start = f * hop;
        for (size_t i = 0; i < window_size; ++i) buf[i] = samples[start + i] * window[i];
        auto spec = rfft(buf, window_size);
        frames[f].start_sample = long(start);
        frames[f].bin_hz = bin_hz;
        frames[f].magnitudes.resize(spec.size());
        for (size_t k = 0; k < spec.size(); ++k) frames[f].magnitudes[k] = std::abs(spec[k]);
    }
    return frames;
}

inline std::vector<SpectralFrame> stft(const Signal & signal, size_t window_size, size_t hop) {
    return stft(signal.samples, signal.sample_rate_hz, window_size, hop);
}

/// Sum of squared magnitudes over bins whose centre lies in [low_hz, high_hz).
inline double band_energy(const SpectralFrame & frame, double low_hz, double high_hz) {
    require(low_hz < high_hz, "band_energy requires low < high");
    double e = 0.0;
    for (size_t k = 0; k < frame.magnitudes.size(); ++k) {
        const double centre = double(k) * frame.bin_hz;
        if (centre >= low_hz && centre < high_hz) e += frame.magnitudes[k] * frame.magnitudes[k];
    }
    return e;
}

// ---------------------------------------------------------------------------
// Band-pass filtering

/// Second-order section b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
    double b0 = 0, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;

    Complex response(double freq_hz, double sample_rate_hz) const {
        const Complex z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate_hz);
        const Complex z2 = z1 * z1;
        return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
    }
};

/// Order-1 Butterworth band-pass prototype B s / (s^2 + B s + W0^2) with
/// pre-warped edges, mapped through the bilinear transform.
inline Biquad design_butterworth_bandpass(double low_hz, double high_hz, double sample_rate_hz) {
    if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0)) {
        fail(ErrorKind::Precondition, "band edges must satisfy 0 < low < high < nyquist");
    }
    const double k = 2.0 * sample_rate_hz;
    const double wl = k * std::tan(std::numbers::pi * low_hz / sample_rate_hz);
    const double wh = k * std::tan(std::numbers::pi * high_hz / sample_rate_hz);
    const double bw = wh - wl;
    const double w0sq = wl * wh;

    const double a0 = k * k + bw * k + w0sq;
    Biquad q;
    q.b0 = bw * k / a0;
    q.b1 = 0.0;
    q.b2 = -bw * k / a0;
    q.a1 = (2.0 * w0sq - 2.0 * k * k) / a0;
    q.a2 = (k * k - bw * k + w0sq) / a0;
    return q;
}

/// Causal (forward-only) transposed direct form II, zero initial state.
inline std::vector<double> apply_biquad(const Biquad & q, std::span<const double> x) {
    std::vector<double> y(x.size());
    double s1 = 0.0, s2 = 0.0;
    for (size_t n = 0; n < x.size(); ++n) {
        const double out = q.b0 * x[n] + s1;
        s1 = q.b1 * x[n] - q.a1 * out + s2;
        s2 = q.b2 * x[n] - q.a2 * out;
        y[n] = out;
    }
    return y;
}

inline std::vector<double> butterworth_bandpass(std::span<const double> x, int sample_rate_hz, double low_hz, double high_hz) {
    return apply_biquad(design_butterworth_bandpass(low_hz, high_hz, sample_rate_hz), x);
}

inline Signal butterworth_bandpass(const Signal & signal, double low_hz, double high_hz) {
    return {butterworth_bandpass(signal.samples, signal.sample_rate_hz, low_hz, high_hz), signal.sample_rate_hz};
}

// ---------------------------------------------------------------------------
// Cross-correlation

/// Correlation values for lags -max_lag..+max_lag. Positive lag means the
/// second signal lags the first.
struct CrossCorrelation {
    int max_lag = 0;
    std::vector<double> values;

    double at(int lag) const { return values[size_t(lag + max_lag)]; }

    /// Lag of the maximum; the smallest |lag| (then the negative one) wins ties.
    int argmax() const {
        int best = 0;
        for (int lag = -max_lag; lag <= max_lag; ++lag) {
            const double v = at(lag), b = at(best);
            if (v > b || (v == b && (std::abs(lag) < std::abs(best) || (std::abs(lag) == std::abs(best) && lag < best)))) {
                best = lag;
            }
        }
        return best;
    }
};

inline double energy(std::span<const double> x) {
    return std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
}

/// value(tau) = sum_n a[n] b[n + tau] over the overlap, divided by
/// sqrt(energy(a) * energy(b)). All-zero input yields all-zero values.
inline CrossCorrelation cross_correlate(std::span<const double> a, std::span<const double> b, int max_lag) {
    require(!a.empty() && !b.empty(), "cross_correlate needs non-empty inputs");
    require(max_lag >= 0, "max_lag must be non-negative");
    if (size_t(max_lag) >= std::min(a.size(), b.size())) {
        fail(ErrorKind::Precondition, "max_lag must be smaller than the shorter input");
    }
    CrossCorrelation cc;
    cc.max_lag = max_lag;
    cc.values.assign(size_t(2 * max_lag + 1), 0.0);
    const double norm = std::sqrt(energy(a) * energy(b));
    if (norm == 0.0) return cc;

    const long na = long(a.size()), nb = long(b.size());
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        const long begin = std::max(0L, -long(lag));
        const long end = std::min(na, nb - lag);
        double s = 0.0;
        for (long n = begin; n < end; ++n) s += a[size_t(n)] * b[size_t(n + lag)];
        cc.values[size_t(lag + max_lag)] = s / norm;
    }
    return cc;
}

inline CrossCorrelation cross_correlate(const Signal & a, const Signal & b, int max_lag) {
    require(a.sample_rate_hz == b.sample_rate_hz, "cross_correlate needs equal sample rates");
    return cross_correlate(a.samples, b.samples, max_lag);
}

/// Vertex offset in [-0.5, 0.5] of the parabola through three equally spaced points.
inline double parabolic_offset(double left, double centre, double right) {
    const double denom = left - 2.0 * centre + right;
    if (denom == 0.0) return 0.0;
    return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

// ---------------------------------------------------------------------------
// Quefrency

inline constexpr size_t kQuefrencyLength = 128;
inline constexpr double kLogFloor = 1e-10;

/// Real cepstrum: real part of IFFT(log(|FFT(segment)| + 1e-10)), natural log.
inline std::vector<double> quefrency(std::span<const double> segment) {
    if (segment.size() != kQuefrencyLength) {
        fail(ErrorKind::Precondition, "quefrency needs exactly 128 samples, got " + std::to_string(segment.size()));
    }
    auto spec = rfft(segment, kQuefrencyLength);
    std::vector<Complex> log_mag(spec.size());
    for (size_t k = 0; k < spec.size(); ++k) log_mag[k] = std::log(std::abs(spec[k]) + kLogFloor);
    return irfft(log_mag, kQuefrencyLength);
}

inline double rms(std::span<const double> x) {
    return x.empty() ? 0.0 : std::sqrt(energy(x) / double(x.size()));
}

} // namespace tapsense
