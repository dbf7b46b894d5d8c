#pragma once

// Multichannel audio and tap-label persistence: RIFF/WAVE (16-bit PCM or
// 32-bit float in, 16-bit PCM out) and the sidecar label CSV.

#include "tapsense/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tapsense {

enum class ChannelRole { TopMic, BottomMic, Other };

inline const char * to_string(ChannelRole role) {
    switch (role) {
        case ChannelRole::TopMic:    return "top";
        case ChannelRole::BottomMic: return "bottom";
        case ChannelRole::Other:     return "other";
    }
    return "other";
}

struct AudioRecording {
    std::vector<std::vector<double>> channels;
    int sample_rate_hz = 44100;
    std::vector<ChannelRole> channel_roles;

    size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
    size_t channel_count() const { return channels.size(); }

    std::optional<size_t> channel_index(ChannelRole role) const {
        for (size_t i = 0; i < channel_roles.size(); ++i) {
            if (channel_roles[i] == role) return i;
        }
        return std::nullopt;
    }

    const std::vector<double> & channel(ChannelRole role) const {
        auto idx = channel_index(role);
        if (!idx) fail(ErrorKind::MissingChannel, std::string("recording has no ") + to_string(role) + " channel");
        return channels[*idx];
    }

    bool has_two_mics() const {
        return std::count(channel_roles.begin(), channel_roles.end(), ChannelRole::TopMic) == 1 &&
               std::count(channel_roles.begin(), channel_roles.end(), ChannelRole::BottomMic) == 1;
    }
};

/// Throws Precondition on the first violated recording invariant.
inline void validate(const AudioRecording & rec) {
    require(rec.sample_rate_hz > 0, "sample rate must be positive");
    require(rec.channel_roles.size() == rec.channels.size(), "one role per channel required");
    for (const auto & ch : rec.channels) {
        require(ch.size() == rec.length(), "channels must have identical length");
        for (double v : ch) {
            require(std::isfinite(v) && v >= -1.0 && v <= 1.0, "sample outside [-1, 1]");
        }
    }
}

/// Default role assignment for WAV channels: 0 = bottom (primary) mic, 1 = top.
inline std::vector<ChannelRole> default_roles(size_t n_channels) {
    std::vector<ChannelRole> roles;
    for (size_t i = 0; i < n_channels; ++i) {
        roles.push_back(i == 0 ? ChannelRole::BottomMic : i == 1 ? ChannelRole::TopMic : ChannelRole::Other);
    }
    return roles;
}

namespace detail {

inline uint32_t read_u32(const unsigned char * p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t read_u16(const unsigned char * p) { return uint16_t(p[0] | p[1] << 8); }

inline void put_u32(std::string & out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string & out, uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char(v >> 8));
}

} // namespace detail

inline AudioRecording load_wav(const std::filesystem::path & path,
                               std::optional<std::vector<ChannelRole>> roles = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::FileNotFound, path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        fail(ErrorKind::UnsupportedEncoding, path.string() + ": not a RIFF/WAVE file");
    }

    uint16_t format = 0, n_channels = 0, bits = 0;
    uint32_t rate = 0;
    const unsigned char * data = nullptr;
    size_t data_size = 0;
    bool have_fmt = false;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char * hdr = bytes.data() + pos;
        const size_t size = detail::read_u32(hdr + 4);
        const size_t body = pos + 8;
        const size_t avail = std::min(size, bytes.size() - body);
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (avail < 16) fail(ErrorKind::UnsupportedEncoding, path.string() + ": truncated fmt chunk");
            const unsigned char * f = bytes.data() + body;
            format = detail::read_u16(f);
            n_channels = detail::read_u16(f + 2);
            rate = detail::read_u32(f + 4);
            bits = detail::read_u16(f + 14);
            if (format == 0xFFFE && avail >= 26) format = detail::read_u16(f + 24); // extensible sub-format
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data = bytes.data() + body;
            data_size = avail;
        }
        pos = body + size + (size & 1);
    }

    if (!have_fmt || data == nullptr) fail(ErrorKind::UnsupportedEncoding, path.string() + ": missing fmt or data chunk");
    const bool pcm16 = format == 1 && bits == 16;
    const bool float32 = format == 3 && bits == 32;
    if (!(pcm16 || float32)) {
        fail(ErrorKind::UnsupportedEncoding, path.string() + ": only 16-bit PCM and 32-bit float are supported");
    }
    if (n_channels < 1 || n_channels > 2) fail(ErrorKind::UnsupportedEncoding, path.string() + ": 1 or 2 channels required");
    if (rate == 0) fail(ErrorKind::UnsupportedEncoding, path.string() + ": zero sample rate");

    const size_t frame_bytes = size_t(n_channels) * (bits / 8);
    const size_t n_frames = data_size / frame_bytes;
    if (n_frames == 0) fail(ErrorKind::EmptyAudio, path.string());

    AudioRecording rec;
    rec.sample_rate_hz = int(rate);
    rec.channels.assign(n_channels, std::vector<double>(n_frames));
    for (size_t i = 0; i < n_frames; ++i) {
        for (size_t c = 0; c < n_channels; ++c) {
            const unsigned char * p = data + i * frame_bytes + c * (bits / 8);
            if (pcm16) {
                rec.channels[c][i] = int16_t(detail::read_u16(p)) / 32768.0;
            } else {
                float f;
                uint32_t u = detail::read_u32(p);
                std::memcpy(&f, &u, 4);
                double v = std::isfinite(f) ? double(f) : 0.0;
                rec.channels[c][i] = std::clamp(v, -1.0, 1.0);
            }
        }
    }

    rec.channel_roles = roles ? *roles : default_roles(n_channels);
    require(rec.channel_roles.size() == n_channels, "role override must name every channel");
    return rec;
}

/// Encodes v in [-1, 1] as round(v * 32768) clipped to the int16 range.
inline int16_t quantize_pcm16(double v) {
    const double q = std::round(std::clamp(v, -1.0, 1.0) * 32768.0);
    return int16_t(std::clamp(q, -32768.0, 32767.0));
}

inline void save_wav(const AudioRecording & rec, const std::filesystem::path & path) {
    validate(rec);
    const uint16_t n_channels = uint16_t(rec.channel_count());
    require(n_channels >= 1, "recording has no channels");
    const uint32_t data_size = uint32_t(rec.length() * n_channels * 2);

    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    detail::put_u32(out, 36 + data_size);
    out += "WAVEfmt ";
    detail::put_u32(out, 16);
    detail::put_u16(out, 1);
    detail::put_u16(out, n_channels);
    detail::put_u32(out, uint32_t(rec.sample_rate_hz));
    detail::put_u32(out, uint32_t(rec.sample_rate_hz) * n_channels * 2);
    detail::put_u16(out, uint16_t(n_channels * 2));
    detail::put_u16(out, 16);
    out += "data";
    detail::put_u32(out, data_size);
    for (size_t i = 0; i < rec.length(); ++i) {
        for (const auto & ch : rec.channels) detail::put_u16(out, uint16_t(quantize_pcm16(ch[i])));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Tap labels

struct TapLabel {
    size_t onset_sample = 0;
    std::string label;
    std::string subject_id;
    std::string session_id;

    bool operator==(const TapLabel &) const = default;
};

inline constexpr const char * kLabelHeader = "onset_sample,label,subject_id,session_id";

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string & line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::string csv_field(const std::string & s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += "\"\"";
        else q.push_back(c);
    }
    return q + "\"";
}

inline void strip_cr(std::string & line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

} // namespace detail

inline std::vector<TapLabel> parse_labels(std::istream & in, const std::string & source = "labels") {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::MalformedInput, source + ": missing header");
    detail::strip_cr(line);
    if (line.size() >= 3 && (unsigned char)line[0] == 0xEF) line = line.substr(3); // UTF-8 BOM
    if (line != kLabelHeader) fail(ErrorKind::MalformedInput, source + ": header must be '" + kLabelHeader + "'");

    std::vector<TapLabel> labels;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_csv_row(line);
        if (fields.size() != 4) {
            fail(ErrorKind::MalformedInput, source + ": row " + std::to_string(row) + " must have 4 fields");
        }
        const std::string & onset = fields[0];
        if (onset.empty() || onset.find_first_not_of("0123456789") != std::string::npos) {
            fail(ErrorKind::MalformedInput, source + ": row " + std::to_string(row) + " has non-integer onset '" + onset + "'");
        }
        TapLabel l;
        try {
            l.onset_sample = std::stoull(onset);
        } catch (const std::exception &) {
            fail(ErrorKind::MalformedInput, source + ": row " + std::to_string(row) + " onset out of range");
        }
        l.label = fields[1];
        l.subject_id = fields[2];
        l.session_id = fields[3];
        labels.push_back(std::move(l));
    }
    std::stable_sort(labels.begin(), labels.end(),
                     [](const TapLabel & a, const TapLabel & b) { return a.onset_sample < b.onset_sample; });
    return labels;
}

inline std::vector<TapLabel> load_labels(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::FileNotFound, path.string());
    return parse_labels(in, path.string());
}

inline void write_labels(std::ostream & out, const std::vector<TapLabel> & labels) {
    out << kLabelHeader << '\n';
    for (const auto & l : labels) {
        out << l.onset_sample << ',' << detail::csv_field(l.label) << ',' << detail::csv_field(l.subject_id) << ','
            << detail::csv_field(l.session_id) << '\n';
    }
}

inline void save_labels(const std::vector<TapLabel> & labels, const std::filesystem::path & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    write_labels(out, labels);
}

/// Checks the label/recording pairing invariant (onset inside the recording).
inline void validate_labels(const std::vector<TapLabel> & labels, const AudioRecording & rec) {
    for (const auto & l : labels) {
        if (l.onset_sample >= rec.length()) {
            fail(ErrorKind::Precondition, "label onset " + std::to_string(l.onset_sample) + " beyond recording end");
        }
    }
}

} // namespace tapsense
