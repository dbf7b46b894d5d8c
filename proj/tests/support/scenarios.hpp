#pragma once

// Simulator set-ups shared by the module tests and the acceptance run.

#include "tapsense/features.hpp"
#include "tapsense/inference.hpp"
#include "tapsense/simulator.hpp"
#include "tapsense/tap_detect.hpp"
#include "tapsense/tdoa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace scenario {

using namespace tapsense;

/// Every symbol `per` times, shuffled with `seed`.
inline std::vector<std::string> balanced_text(const std::vector<std::string> & alphabet, size_t per, uint64_t seed) {
    std::vector<std::string> text;
    for (size_t r = 0; r < per; ++r) text.insert(text.end(), alphabet.begin(), alphabet.end());
    Rng rng(seed);
    rng.shuffle(text);
    return text;
}

inline std::vector<std::string> random_text(const std::vector<std::string> & alphabet, size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::string> text;
    for (size_t i = 0; i < n; ++i) text.push_back(alphabet[rng.below(alphabet.size())]);
    return text;
}

struct Match {
    size_t matched = 0;
    size_t false_positives = 0;
    long worst_error = 0;
};

/// One-to-one matching in onset order: each truth takes the nearest unused
/// detection within `tolerance`.
inline Match match_detections(const std::vector<TapLabel> & truth, const std::vector<TapSegment> & found, long tolerance) {
    Match m;
    std::vector<bool> used(found.size(), false);
    for (const auto & t : truth) {
        long best = tolerance + 1;
        size_t best_j = found.size();
        for (size_t j = 0; j < found.size(); ++j) {
            const long d = std::labs(long(found[j].onset_sample) - long(t.onset_sample));
            if (!used[j] && d < best) {
                best = d;
                best_j = j;
            }
        }
        if (best_j < found.size()) {
            used[best_j] = true;
            ++m.matched;
            m.worst_error = std::max(m.worst_error, best);
        }
    }
    m.false_positives = found.size() - m.matched;
    return m;
}

/// A two-channel recording of `length` samples holding one synthesized tap
/// whose first arrival lands on sample `onset`.
inline AudioRecording place_tap(const SynthesizedTap & tap, size_t onset, size_t length) {
    const size_t first = size_t(std::floor(std::min(tap.truth.onset_bottom, tap.truth.onset_top)));
    AudioRecording rec;
    rec.channels.assign(2, std::vector<double>(length, 0.0));
    rec.channel_roles = default_roles(2);
    for (size_t i = 0; i < tap.bottom.size(); ++i) {
        const long at = long(onset) - long(first) + long(i);
        if (at < 0 || at >= long(length)) continue;
        rec.channels[0][size_t(at)] = tap.bottom[i];
        rec.channels[1][size_t(at)] = tap.top[i];
    }
    return rec;
}

/// OS-style key click (2.4 kHz, sharp attack) or vibration buzz (170 Hz).
inline std::vector<double> feedback_waveform(FeedbackKind kind, int fs = 44100) {
    const bool click = kind == FeedbackKind::SoundFeedback;
    const size_t n = click ? 900 : 3000;
    const double hz = click ? 2400.0 : 170.0, decay = click ? 0.006 : 0.0012;
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i) {
        const double attack = std::min(1.0, double(i) / 20.0);
        w[i] = 0.3 * attack * std::exp(-decay * double(i)) * std::sin(2.0 * std::numbers::pi * hz * double(i) / fs);
    }
    return w;
}

/// Integer-delay noiseless test pair: bottom is top delayed by `lag` samples,
/// so the top microphone heard the tap first for positive lag.
inline std::pair<std::vector<double>, std::vector<double>> shifted_pair(const std::vector<double> & source, int lag, size_t pad = 64) {
    const size_t n = source.size() + 2 * pad;
    std::vector<double> top(n, 0.0), bottom(n, 0.0);
    for (size_t i = 0; i < source.size(); ++i) {
        top[pad + i] = source[i];
        bottom[size_t(long(pad + i) + lag)] = source[i];
    }
    return {top, bottom};
}

/// Location on the device whose expected delay is `target` samples, found by
/// bisection along the vertical line at x.
inline Point location_for_delay(const DeviceGeometry & g, double target, double x) {
    double lo = 0.0, hi = g.screen_height_m;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (expected_delay(g, {x, mid}) < target) lo = mid;
        else hi = mid;
    }
    return {x, 0.5 * (lo + hi)};
}

struct SweepResult {
    size_t trials = 0;
    size_t within = 0;
    double worst = 0.0;
};

/// Simulator taps with target delays uniform in [-17, 17] samples at the given
/// SNR; counts band-pass + CC estimates within `tolerance` of the true delay.
inline SweepResult tdoa_sweep(size_t trials, double snr_db, uint64_t seed, double tolerance = 1.0) {
    const auto g = phone_geometry();
    Rng rng(seed);
    SweepResult out;
    for (size_t t = 0; t < trials; ++t) {
        const double target = rng.uniform(-17.0, 17.0);
        const double x = g.screen_width_m / 2 + rng.uniform(-0.002, 0.002);
        TapSynthConfig c;
        c.snr_db = snr_db;
        c.seed = derive_seed(seed, t);
        const auto tap = synthesize_tap(g, location_for_delay(g, target, x), c);
        const auto est = estimate_delay(tap.top, tap.bottom, DelayMethod::CC, TdoaConfig{}, g.sample_rate_hz, g);
        const double err = std::abs(est.lag_samples - tap.truth.true_delay);
        ++out.trials;
        if (err <= tolerance) ++out.within;
        out.worst = std::max(out.worst, err);
    }
    return out;
}

/// Per-letter classifier trained on a simulated QWERTY session, plus held-out
/// single-tap feature pools to synthesize words from.
struct LetterSetup {
    LdaModel model;
    std::map<std::string, std::vector<FeatureVector>> pools;
};

inline LetterSetup letter_setup(uint64_t seed, size_t train_per = 40, size_t pool_per = 20, double snr_db = 20.0) {
    const auto g = phone_geometry();
    std::vector<std::string> alphabet;
    for (char ch = 'a'; ch <= 'z'; ++ch) alphabet.emplace_back(1, ch);
    TapSynthConfig c;
    c.snr_db = snr_db;
    c.seed = seed;
    const auto s = synthesize_session(g, qwerty_layout(g), balanced_text(alphabet, train_per + pool_per, seed), 2500, c);
    const auto ds = extract_dataset(s.recording, s.labels, FeatureSet::TopBotm);
    Dataset train;
    LetterSetup out;
    std::map<std::string, size_t> seen;
    for (const auto & x : ds) {
        if (seen[x.label]++ < train_per) train.push_back(x);
        else out.pools[x.label].push_back(x.features);
    }
    out.model = train_lda(train);
    return out;
}

/// Mean 'within m attempts' recovery over `runs` seeded word syntheses.
/// `rank` maps a ranking sequence to the guess list for one word.
template <typename Ranker>
inline std::vector<double> mean_recovery(const LetterSetup & setup, const std::vector<Symbols> & words, size_t runs, size_t max_attempts,
                                         uint64_t seed, Ranker rank) {
    std::vector<double> mean(max_attempts, 0.0);
    for (size_t r = 0; r < runs; ++r) {
        std::vector<std::vector<ScoredSequence>> guesses;
        for (size_t w = 0; w < words.size(); ++w) {
            guesses.push_back(rank(synthesize_word_rankings(setup.pools, words[w], setup.model, derive_seed(derive_seed(seed, r), w))));
        }
        const auto res = score_attack(guesses, words, max_attempts);
        for (size_t m = 0; m < max_attempts; ++m) mean[m] += res.recovery_curve[m] / double(runs);
    }
    return mean;
}

inline std::vector<std::string> read_lines(const std::string & path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

inline std::string read_text(const std::string & path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace scenario
