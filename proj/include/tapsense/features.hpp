#pragma once

// Quefrency feature sets for one tap: a single microphone (Top, Botm) or both
// microphones plus the inter-mic delay and the quefrency of their difference.

#include "tapsense/audio_io.hpp"
#include "tapsense/dsp.hpp"
#include "tapsense/tap_detect.hpp"
#include "tapsense/tdoa.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace tapsense {

enum class FeatureSet { Top, Botm, TopBotm };

inline const char * to_string(FeatureSet fs) {
    switch (fs) {
        case FeatureSet::Top:     return "top";
        case FeatureSet::Botm:    return "botm";
        case FeatureSet::TopBotm: return "topbotm";
    }
    return "?";
}

inline std::optional<FeatureSet> parse_feature_set(const std::string & s) {
    if (s == "top") return FeatureSet::Top;
    if (s == "botm" || s == "bottom") return FeatureSet::Botm;
    if (s == "topbotm" || s == "top+botm") return FeatureSet::TopBotm;
    return std::nullopt;
}

inline constexpr size_t feature_dim(FeatureSet fs) {
    return fs == FeatureSet::TopBotm ? 3 * kQuefrencyLength + 1 : kQuefrencyLength;
}

/// Index of the delay element inside a TopBotm vector.
inline constexpr size_t kDelayIndex = 2 * kQuefrencyLength;

struct FeatureVector {
    std::vector<double> values;
    FeatureSet feature_set = FeatureSet::TopBotm;

    size_t dim() const { return values.size(); }
};

struct FeatureConfig {
    TdoaConfig tdoa;
    size_t delay_window = 512;  // samples from the onset (head, then tail) fed to the delay estimator
};

namespace detail {

inline std::vector<double> delay_window(const ChannelWindow & w, size_t n) {
    std::vector<double> out(w.head);
    for (size_t i = 0; out.size() < n && i < w.tail.size(); ++i) out.push_back(w.tail[i]);
    out.resize(n, 0.0);
    return out;
}

} // namespace detail

/// Delay between the mics for one segment (band-pass + cross-correlation);
/// 0 when either channel carries nothing in the prefilter band.
inline double segment_delay(const TapSegment & seg, const FeatureConfig & config) {
    const auto top = detail::delay_window(seg.window(ChannelRole::TopMic), config.delay_window);
    const auto bottom = detail::delay_window(seg.window(ChannelRole::BottomMic), config.delay_window);
    try {
        return estimate_delay(top, bottom, DelayMethod::CC, config.tdoa, seg.sample_rate_hz).lag_samples;
    } catch (const Error & e) {
        if (e.kind() == ErrorKind::NoSignal) return 0.0;
        throw;
    }
}

inline FeatureVector extract_features(const TapSegment & seg, FeatureSet fs, const FeatureConfig & config = {}) {
    FeatureVector fv;
    fv.feature_set = fs;
    switch (fs) {
        case FeatureSet::Top:
            fv.values = quefrency(seg.window(ChannelRole::TopMic).head);
            break;
        case FeatureSet::Botm:
            fv.values = quefrency(seg.window(ChannelRole::BottomMic).head);
            break;
        case FeatureSet::TopBotm: {
            const auto & top = seg.window(ChannelRole::TopMic).head;
            const auto & bottom = seg.window(ChannelRole::BottomMic).head;
            fv.values = quefrency(top);
            const auto qb = quefrency(bottom);
            fv.values.insert(fv.values.end(), qb.begin(), qb.end());
            fv.values.push_back(segment_delay(seg, config));
            std::vector<double> diff(kQuefrencyLength);
            for (size_t i = 0; i < kQuefrencyLength; ++i) diff[i] = top[i] - bottom[i];
            const auto qd = quefrency(diff);
            fv.values.insert(fv.values.end(), qd.begin(), qd.end());
            break;
        }
    }
    return fv;
}

// ---------------------------------------------------------------------------
// Datasets

struct LabeledSample {
    FeatureVector features;
    std::string label;
    std::string subject_id;
};

using Dataset = std::vector<LabeledSample>;

/// One feature vector per ground-truth label, sliced at the labelled onset.
inline Dataset extract_dataset(const AudioRecording & rec, const std::vector<TapLabel> & labels, FeatureSet fs,
                               const FeatureConfig & config = {}) {
    if (fs != FeatureSet::Botm && !rec.channel_index(ChannelRole::TopMic)) fail(ErrorKind::MissingChannel, "missing TopMic channel");
    if (fs != FeatureSet::Top && !rec.channel_index(ChannelRole::BottomMic)) fail(ErrorKind::MissingChannel, "missing BottomMic channel");
    Dataset out;
    out.reserve(labels.size());
    for (const auto & l : labels) {
        if (l.onset_sample + kHeadLength > rec.length()) {
            fail(ErrorKind::InsufficientHead, "onset " + std::to_string(l.onset_sample) + " leaves fewer than 128 samples");
        }
        auto seg = slice_segment(rec, l.onset_sample);
        out.push_back({extract_features(seg, fs, config), l.label, l.subject_id});
    }
    return out;
}

/// Detection followed by extraction, for recordings without labels.
inline std::vector<FeatureVector> extract_detected(const AudioRecording & rec, FeatureSet fs, const DetectorConfig & detector = {},
                                                   const FeatureConfig & config = {}) {
    std::vector<FeatureVector> out;
    for (const auto & seg : detect_taps(rec, detector)) out.push_back(extract_features(seg, fs, config));
    return out;
}

inline void write_dataset_csv(std::ostream & out, const Dataset & ds) {
    const size_t dim = ds.empty() ? 0 : ds.front().features.dim();
    out << "label,subject_id";
    for (size_t i = 0; i < dim; ++i) out << ",f" << i;
    out << '\n';
    char buf[32];
    for (const auto & s : ds) {
        require(s.features.dim() == dim, "dataset rows must share one dimension");
        out << detail::csv_field(s.label) << ',' << detail::csv_field(s.subject_id);
        for (double v : s.features.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

inline void save_dataset_csv(const Dataset & ds, const std::filesystem::path & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    write_dataset_csv(out, ds);
}

inline FeatureSet feature_set_for_dim(size_t dim, FeatureSet single_mic_default = FeatureSet::Top) {
    return dim == feature_dim(FeatureSet::TopBotm) ? FeatureSet::TopBotm : single_mic_default;
}

inline Dataset parse_dataset_csv(std::istream & in, const std::string & source = "features") {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::MalformedInput, source + ": missing header");
    detail::strip_cr(line);
    const auto header = detail::split_csv_row(line);
    if (header.size() < 3 || header[0] != "label" || header[1] != "subject_id") {
        fail(ErrorKind::MalformedInput, source + ": header must start with label,subject_id,f0");
    }
    const size_t dim = header.size() - 2;
    for (size_t i = 0; i < dim; ++i) {
        if (header[i + 2] != "f" + std::to_string(i)) fail(ErrorKind::MalformedInput, source + ": unexpected column " + header[i + 2]);
    }
    Dataset ds;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        detail::strip_cr(line);
        if (line.empty()) continue;
        const auto fields = detail::split_csv_row(line);
        if (fields.size() != dim + 2) fail(ErrorKind::MalformedInput, source + ": row " + std::to_string(row) + " has wrong width");
        LabeledSample s;
        s.label = fields[0];
        s.subject_id = fields[1];
        s.features.values.resize(dim);
        for (size_t i = 0; i < dim; ++i) {
            char * end = nullptr;
            s.features.values[i] = std::strtod(fields[i + 2].c_str(), &end);
            if (fields[i + 2].empty() || *end != '\0' || !std::isfinite(s.features.values[i])) {
                fail(ErrorKind::MalformedInput, source + ": row " + std::to_string(row) + " column f" + std::to_string(i) + " is not a finite number");
            }
        }
        s.features.feature_set = feature_set_for_dim(dim);
        ds.push_back(std::move(s));
    }
    return ds;
}

inline Dataset load_dataset_csv(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::FileNotFound, path.string());
    return parse_dataset_csv(in, path.string());
}

} // namespace tapsense
