#pragma once

// Tap onset detection from the spectral signature of a touchscreen tap (a
// brief high-frequency burst, then mid-band energy, then a long low-frequency
// tail) and template subtraction of OS feedback sounds.

#include "tapsense/audio_io.hpp"
#include "tapsense/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace tapsense {

inline constexpr size_t kHeadLength = 128;
inline constexpr size_t kTailLength = 1500;

struct ChannelWindow {
    std::vector<double> head;  // kHeadLength samples from the onset
    std::vector<double> tail;  // the kTailLength samples after the head
};

struct TapSegment {
    size_t onset_sample = 0;
    int sample_rate_hz = 44100;
    std::optional<ChannelWindow> top;
    std::optional<ChannelWindow> bottom;
    double detection_score = 0.0;
    std::optional<std::string> label;

    const ChannelWindow & window(ChannelRole role) const {
        const auto & w = role == ChannelRole::TopMic ? top : bottom;
        if (!w) fail(ErrorKind::MissingChannel, std::string("segment has no ") + to_string(role) + " channel");
        return *w;
    }
};

/// Head and tail windows at `onset`, zero-padded past the recording edge.
inline ChannelWindow slice_window(std::span<const double> channel, size_t onset) {
    ChannelWindow w;
    w.head.assign(kHeadLength, 0.0);
    w.tail.assign(kTailLength, 0.0);
    for (size_t i = 0; i < kHeadLength && onset + i < channel.size(); ++i) w.head[i] = channel[onset + i];
    for (size_t i = 0; i < kTailLength && onset + kHeadLength + i < channel.size(); ++i) {
        w.tail[i] = channel[onset + kHeadLength + i];
    }
    return w;
}

inline TapSegment slice_segment(const AudioRecording & rec, size_t onset) {
    TapSegment seg;
    seg.onset_sample = onset;
    seg.sample_rate_hz = rec.sample_rate_hz;
    if (auto i = rec.channel_index(ChannelRole::TopMic)) seg.top = slice_window(rec.channels[*i], onset);
    if (auto i = rec.channel_index(ChannelRole::BottomMic)) seg.bottom = slice_window(rec.channels[*i], onset);
    return seg;
}

struct Band {
    double low_hz;
    double high_hz;
};

struct DetectorConfig {
    size_t stft_window = 64;
    size_t stft_hop = 16;
    Band high_band{7500.0, 9000.0};
    Band mid_band{3900.0, 4500.0};
    Band low_band{40.0, 100.0};
    double threshold_k = 6.0;           // MAD multiplier
    size_t refractory_samples = 2000;
    size_t noise_window_frames = 200;
    size_t min_history_frames = 16;
    size_t mid_confirm_frames = 4;
    size_t low_confirm_samples = 1500;
    double low_confirm_ratio = 2.0;     // low-band power after onset vs before
    size_t low_reference_samples = 500;
    double onset_rms_factor = 3.0;
    size_t onset_rms_window = 1024;
    ChannelRole detection_channel = ChannelRole::BottomMic;
};

inline void validate(const DetectorConfig & c, int sample_rate_hz) {
    const double nyquist = sample_rate_hz / 2.0;
    for (const Band & b : {c.low_band, c.mid_band, c.high_band}) {
        require(b.low_hz >= 0.0 && b.low_hz < b.high_hz && b.high_hz <= nyquist, "detector bands must lie inside [0, nyquist]");
    }
    require(c.low_band.high_hz <= c.mid_band.low_hz && c.mid_band.high_hz <= c.high_band.low_hz, "detector bands must be ordered");
    require(c.refractory_samples >= kHeadLength, "refractory period must cover the analysis head");
    require(is_pow2(c.stft_window) && c.stft_hop > 0 && c.stft_hop <= c.stft_window, "invalid stft parameters");
    require(c.noise_window_frames >= c.min_history_frames && c.min_history_frames > 0, "noise window too short");
}

namespace detail {

struct RobustLevel {
    double median;
    double mad;
};

inline RobustLevel robust_level(std::vector<double> v) {
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + long(mid), v.end());
    const double med = v[mid];
    for (double & x : v) x = std::abs(x - med);
    std::nth_element(v.begin(), v.begin() + long(mid), v.end());
    return {med, v[mid]};
}

// 1.4826 * MAD of the samples, an RMS estimate that ignores transients.
inline double robust_rms(std::span<const double> x) {
    if (x.empty()) return 0.0;
    std::vector<double> a(x.begin(), x.end());
    for (double & v : a) v = std::abs(v);
    const size_t mid = a.size() / 2;
    std::nth_element(a.begin(), a.begin() + long(mid), a.end());
    return 1.4826 * a[mid];
}

inline double mean_power(std::span<const double> x, size_t begin, size_t end) {
    end = std::min(end, x.size());
    if (begin >= end) return 0.0;
    return energy(x.subspan(begin, end - begin)) / double(end - begin);
}

} // namespace detail

/// Adaptive-threshold tap detector. A frame triggers when its high-band energy
/// exceeds median + k * MAD of the trailing non-silent frames; the trigger is
/// kept only if mid-band energy rises within a few frames and low-band power
/// over the following tail exceeds the power just before the onset.
inline std::vector<TapSegment> detect_taps(const AudioRecording & rec, const DetectorConfig & config = {}) {
    require(rec.channel_count() >= 1, "recording has no channels");
    validate(config, rec.sample_rate_hz);
    require(rec.length() >= config.stft_window, "recording shorter than one stft window");

    const auto ch_index = rec.channel_index(config.detection_channel).value_or(0);
    const std::vector<double> & x = rec.channels[ch_index];
    // Frame grid and look-back windows are anchored on the first nonzero
    // sample, so leading digital silence shifts onsets and nothing else.
    const size_t first = size_t(std::find_if(x.begin(), x.end(), [](double v) { return v != 0.0; }) - x.begin());
    if (first == x.size()) return {};
    if (x.size() - first < config.stft_window) return {};
    auto frames = stft(std::span<const double>(x).subspan(first), rec.sample_rate_hz, config.stft_window, config.stft_hop);
    for (auto & fr : frames) fr.start_sample += long(first);
    const size_t n_frames = frames.size();

    std::vector<double> high(n_frames), mid(n_frames);
    std::vector<bool> silent(n_frames);
    for (size_t f = 0; f < n_frames; ++f) {
        high[f] = band_energy(frames[f], config.high_band.low_hz, config.high_band.high_hz);
        mid[f] = band_energy(frames[f], config.mid_band.low_hz, config.mid_band.high_hz);
        silent[f] = std::all_of(frames[f].magnitudes.begin(), frames[f].magnitudes.end(), [](double m) { return m == 0.0; });
    }

    // Digital silence carries no information about the noise floor, so it is
    // left out of the trailing statistics. Until a full window of history
    // exists the first non-silent frames of the recording stand in for it
    // (offline, so looking ahead is fine; a tap in a noiseless file is then
    // still found, and the first second is not judged on a handful of frames).
    std::vector<double> high_thr(n_frames, INFINITY), mid_thr(n_frames, INFINITY);
    {
        std::vector<size_t> warmup;
        for (size_t f = 0; f < n_frames && warmup.size() < config.noise_window_frames; ++f) {
            if (!silent[f]) warmup.push_back(f);
        }
        std::vector<size_t> history;
        std::vector<double> hv, mv;
        for (size_t f = 0; f < n_frames; ++f) {
            const auto & basis = history.size() >= config.noise_window_frames ? history : warmup;
            if (basis.size() >= config.min_history_frames) {
                hv.clear();
                mv.clear();
                for (size_t h : basis) {
                    hv.push_back(high[h]);
                    mv.push_back(mid[h]);
                }
                const auto hl = detail::robust_level(hv);
                const auto ml = detail::robust_level(mv);
                high_thr[f] = hl.median + config.threshold_k * hl.mad;
                mid_thr[f] = ml.median + config.threshold_k * ml.mad;
            }
            if (!silent[f]) {
                history.push_back(f);
                if (history.size() > config.noise_window_frames) history.erase(history.begin());
            }
        }
    }

    const auto low = butterworth_bandpass(x, rec.sample_rate_hz, config.low_band.low_hz, config.low_band.high_hz);
    const double lsb = 1.0 / 32768.0;

    struct Candidate {
        size_t onset;
        double score;
    };
    std::vector<Candidate> candidates;

    for (size_t f = 0; f < n_frames; ++f) {
        const bool above = high[f] > high_thr[f];
        const bool prev_above = f > 0 && high[f - 1] > high_thr[f - 1];
        if (!above || prev_above) continue;

        double score = 0.0;
        size_t peak = f;
        for (size_t g = f; g < n_frames && high[g] > high_thr[g] && g < f + 8; ++g) {
            if (high[g] / high_thr[g] > score) {
                score = high[g] / high_thr[g];
                peak = g;
            }
        }

        // the mid-band body follows the burst, so count from the burst peak
        bool mid_ok = false;
        for (size_t g = f; g < std::min(n_frames, peak + config.mid_confirm_frames + 1); ++g) {
            if (mid[g] > mid_thr[f]) mid_ok = true;
        }
        if (!mid_ok) continue;

        const size_t start = size_t(frames[f].start_sample);
        const size_t rms_begin = std::max(first, start > config.onset_rms_window ? start - config.onset_rms_window : 0);
        const size_t rms_end = std::max(rms_begin, start);
        const double sigma = std::max(detail::robust_rms(std::span<const double>(x).subspan(rms_begin, rms_end - rms_begin)), lsb);
        size_t onset = start;
        for (size_t i = start; i < start + config.stft_window; ++i) {
            if (std::abs(x[i]) > config.onset_rms_factor * sigma) {
                onset = i;
                break;
            }
        }

        const size_t ref_begin = std::max(first, onset > config.low_reference_samples + 100 ? onset - config.low_reference_samples - 100 : 0);
        const size_t ref_end = std::max(ref_begin, onset > 100 ? onset - 100 : 0);
        const double before = detail::mean_power(low, ref_begin, ref_end);
        const double after = detail::mean_power(low, onset, onset + config.low_confirm_samples);
        if (!(after > config.low_confirm_ratio * before)) continue;

        candidates.push_back({onset, score});
    }

    // Greedy non-maximum suppression: strongest first, ties to the earlier onset.
    std::vector<size_t> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return candidates[a].score > candidates[b].score; });
    std::vector<Candidate> kept;
    for (size_t i : order) {
        const auto & c = candidates[i];
        bool clash = false;
        for (const auto & k : kept) {
            const size_t d = c.onset > k.onset ? c.onset - k.onset : k.onset - c.onset;
            if (d < config.refractory_samples) clash = true;
        }
        if (!clash) kept.push_back(c);
    }
    std::sort(kept.begin(), kept.end(), [](const Candidate & a, const Candidate & b) { return a.onset < b.onset; });

    std::vector<TapSegment> segments;
    for (const auto & k : kept) {
        auto seg = slice_segment(rec, k.onset);
        seg.detection_score = k.score;
        segments.push_back(std::move(seg));
    }
    return segments;
}

/// Detections in the label CSV shape, with an empty label column.
inline std::vector<TapLabel> detections_to_labels(const std::vector<TapSegment> & segments, const std::string & subject_id,
                                                  const std::string & session_id) {
    std::vector<TapLabel> out;
    for (const auto & s : segments) out.push_back({s.onset_sample, s.label.value_or(""), subject_id, session_id});
    return out;
}

// ---------------------------------------------------------------------------
// Feedback sounds

enum class FeedbackKind { SoundFeedback, VibrationFeedback };

struct FeedbackTemplate {
    std::vector<double> waveform;
    FeedbackKind kind = FeedbackKind::SoundFeedback;
};

/// Aligns every isolated feedback event to the first one (peak of |cross-
/// correlation|, polarity kept), averages them and trims the result to the
/// span where its power is at least 1% of the peak.
inline FeedbackTemplate build_feedback_template(const std::vector<AudioRecording> & recordings, FeedbackKind kind) {
    if (recordings.empty()) fail(ErrorKind::Precondition, "no feedback recordings given");
    auto pick = [](const AudioRecording & r) -> const std::vector<double> & {
        require(r.channel_count() >= 1 && r.length() > 0, "feedback recording is empty");
        return r.channels[r.channel_index(ChannelRole::BottomMic).value_or(0)];
    };

    const auto & ref = pick(recordings.front());
    std::vector<double> sum(ref.begin(), ref.end());
    double mean_peak = 0.0;
    for (const auto & r : recordings) {
        const auto & x = pick(r);
        double peak = 0.0;
        for (double v : x) peak = std::max(peak, std::abs(v));
        mean_peak += peak / double(recordings.size());
    }
    for (size_t i = 1; i < recordings.size(); ++i) {
        const auto & x = pick(recordings[i]);
        const int max_lag = int(std::min(ref.size(), x.size())) - 1;
        const auto cc = cross_correlate(ref, x, max_lag);
        int best = 0;
        for (int lag = -max_lag; lag <= max_lag; ++lag) {
            if (std::abs(cc.at(lag)) > std::abs(cc.at(best))) best = lag;
        }
        // x[n + best] lines up with ref[n]
        for (size_t n = 0; n < sum.size(); ++n) {
            const long j = long(n) + best;
            if (j >= 0 && j < long(x.size())) sum[n] += x[size_t(j)];
        }
    }
    for (double & v : sum) v /= double(recordings.size());

    double peak_power = 0.0;
    for (double v : sum) peak_power = std::max(peak_power, v * v);
    if (std::sqrt(peak_power) < 1e-3 * mean_peak || peak_power == 0.0) {
        fail(ErrorKind::DegenerateTemplate, "aligned feedback events cancel out");
    }
    size_t first = 0, last = sum.size() - 1;
    while (sum[first] * sum[first] < 0.01 * peak_power) ++first;
    while (sum[last] * sum[last] < 0.01 * peak_power) --last;
    return {std::vector<double>(sum.begin() + long(first), sum.begin() + long(last) + 1), kind};
}

struct FeedbackSubtraction {
    Signal output;
    bool found = false;     // false: NoFeedbackFound, output equals the input
    size_t offset = 0;
    double amplitude = 0.0;
    double peak_correlation = 0.0;
};

inline constexpr double kFeedbackMinCorrelation = 0.3;
// Decaying tones look alike under whole-period shifts; placements this close
// to the best normalized correlation count as tied.
inline constexpr double kFeedbackCorrelationTie = 0.02;

/// Removes the least-squares scaled template at the placement of maximum
/// normalized cross-correlation. Among near-tied placements the one removing
/// the most energy wins.
inline FeedbackSubtraction subtract_feedback(const Signal & signal, const FeedbackTemplate & tmpl) {
    const auto & s = signal.samples;
    const auto & t = tmpl.waveform;
    require(!t.empty() && t.size() < s.size(), "template must be non-empty and shorter than the signal");
    const double t_energy = energy(t);
    require(t_energy > 0.0, "template has zero energy");

    FeedbackSubtraction result;
    result.output = signal;

    const size_t n_pos = s.size() - t.size() + 1;
    std::vector<double> ncc(n_pos, -INFINITY), dots(n_pos, 0.0);
    double best = -INFINITY;
    for (size_t p = 0; p < n_pos; ++p) {
        const double window_energy = energy(std::span<const double>(s).subspan(p, t.size()));
        if (window_energy <= 0.0) continue;
        double dot = 0.0;
        for (size_t i = 0; i < t.size(); ++i) dot += s[p + i] * t[i];
        dots[p] = dot;
        ncc[p] = dot / std::sqrt(window_energy * t_energy);
        best = std::max(best, ncc[p]);
    }
    size_t best_at = 0;
    for (size_t p = 0; p < n_pos; ++p) {
        if (ncc[p] >= best - kFeedbackCorrelationTie && (ncc[best_at] < best - kFeedbackCorrelationTie || dots[p] > dots[best_at])) best_at = p;
    }
    result.peak_correlation = std::isfinite(ncc[best_at]) ? ncc[best_at] : 0.0;
    if (!(best >= kFeedbackMinCorrelation)) return result;

    double dot = 0.0;
    for (size_t i = 0; i < t.size(); ++i) dot += s[best_at + i] * t[i];
    const double alpha = dot / t_energy;
    for (size_t i = 0; i < t.size(); ++i) result.output.samples[best_at + i] -= alpha * t[i];
    result.found = true;
    result.offset = best_at;
    result.amplitude = alpha;
    return result;
}

} // namespace tapsense
