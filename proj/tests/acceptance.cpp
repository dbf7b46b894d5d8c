// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Thresholds are fixed here; see README for what each line means.

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/scenarios.hpp"

#include "tapsense/classify.hpp"
#include "tapsense/dsp.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>

using namespace tapsense;
namespace fs = std::filesystem;

namespace {

const std::string kData = TAPSENSE_TEST_DATA;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char * f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// 1. band-pass + CC delay accuracy at 20 dB
Outcome tdoa_accuracy() {
    const auto t0 = Clock::now();
    const auto r = scenario::tdoa_sweep(500, 20.0, 1);
    const double t = seconds_since(t0);
    const bool ok = r.within * 100 >= r.trials * 95 && t < 30.0;
    return {ok, fmt("%zu/%zu within 1 sample (need 95%%), worst %.2f, %.1f s (limit 30)", r.within, r.trials, r.worst, t)};
}

// 2. integer lags exact for CC, GCC-PHAT, ASDF; antisymmetry to 1e-6
Outcome noiseless_exactness() {
    const auto g = phone_geometry();
    size_t exact = 0, total = 0;
    double worst_asym = 0.0;
    for (int c = 0; c < 40; ++c) {
        Rng r{uint64_t(c)};
        TapSynthConfig tc;
        tc.snr_db = std::numeric_limits<double>::infinity();
        tc.seed = uint64_t(100 + c);
        const auto src = synthesize_tap(g, gen::point_in(r, g), tc).bottom;
        const int lag = int(r.below(35)) - 17;
        const auto [top, bottom] = scenario::shifted_pair(src, lag);
        for (DelayMethod m : {DelayMethod::CC, DelayMethod::GCC_PHAT, DelayMethod::ASDF}) {
            const double ab = estimate_delay(top, bottom, m, TdoaConfig{}, g.sample_rate_hz).lag_samples;
            const double ba = estimate_delay(bottom, top, m, TdoaConfig{}, g.sample_rate_hz).lag_samples;
            ++total;
            if (ab == double(lag)) ++exact;
            worst_asym = std::max(worst_asym, std::abs(ab + ba));
        }
    }
    return {exact == total && worst_asym <= 1e-6, fmt("%zu/%zu exact, worst |d(a,b)+d(b,a)| = %.2e (limit 1e-6)", exact, total, worst_asym)};
}

// 3. detector on a 100-tap 10 dB session, and on silence
Outcome tap_detection() {
    const auto t0 = Clock::now();
    const auto g = phone_geometry();
    TapSynthConfig c;
    c.snr_db = 10.0;
    c.seed = 1;
    const auto s = synthesize_session(g, pin_pad_layout(g), scenario::random_text(gen::digits(), 100, 1), 2500, c);
    const auto m = scenario::match_detections(s.labels, detect_taps(s.recording), 100);
    AudioRecording silence;
    silence.channels.assign(2, std::vector<double>(10 * 44100, 0.0));
    silence.channel_roles = default_roles(2);
    const size_t quiet = detect_taps(silence).size();
    const double t = seconds_since(t0);
    const bool ok = m.matched >= 95 && m.false_positives <= 5 && quiet == 0 && t < 60.0;
    return {ok, fmt("%zu/100 matched within 100 samples, %zu false positives, %zu on silence, %.1f s (limit 60)", m.matched, m.false_positives,
                    quiet, t)};
}

double band_energy_of(const std::vector<double> & x, double lo, double hi) {
    double e = 0.0;
    for (const auto & f : stft(x, 44100, 256, 128)) e += band_energy(f, lo, hi);
    return e;
}

// 4. feedback template built from noisy isolated events, then subtracted
Outcome feedback_subtraction() {
    const auto g = phone_geometry();
    const auto layout = pin_pad_layout(g);
    double worst_reduction = 1.0, worst_pure = 0.0;
    size_t mixtures = 0;
    for (auto kind : {FeedbackKind::SoundFeedback, FeedbackKind::VibrationFeedback}) {
        const auto w = scenario::feedback_waveform(kind);
        Rng r{kind == FeedbackKind::SoundFeedback ? 1u : 2u};
        std::vector<AudioRecording> events;
        for (int e = 0; e < 8; ++e) {
            AudioRecording rec;
            rec.channels = {gen::noise(r, w.size() + 600, 0.002)};
            rec.channel_roles = default_roles(1);
            const size_t at = 50 + r.below(400);
            for (size_t i = 0; i < w.size(); ++i) rec.channels[0][at + i] += w[i];
            events.push_back(std::move(rec));
        }
        const auto tmpl = build_feedback_template(events, kind);
        const double hz = kind == FeedbackKind::SoundFeedback ? 2400.0 : 170.0;
        for (int c = 0; c < 10; ++c) {
            TapSynthConfig tc;
            tc.snr_db = 30;
            tc.seed = uint64_t(50 + c);
            const auto tap = synthesize_tap(g, layout.position(std::to_string(1 + c % 9)), tc);
            std::vector<double> tap_only(8000, 0.0);
            for (size_t i = 0; i < tap.bottom.size() && i < tap_only.size(); ++i) tap_only[i] = tap.bottom[i];
            Signal s{tap_only, 44100};
            const size_t at = 300 + r.below(3000);
            const double a = r.uniform(0.3, 1.0);
            for (size_t i = 0; i < w.size(); ++i) s.samples[at + i] += a * w[i];
            std::vector<double> before(s.samples.size()), after(s.samples.size());
            const auto out = subtract_feedback(s, tmpl);
            for (size_t i = 0; i < s.samples.size(); ++i) {
                before[i] = s.samples[i] - tap_only[i];
                after[i] = out.output.samples[i] - tap_only[i];
            }
            const double e0 = band_energy_of(before, 0.8 * hz, 1.2 * hz), e1 = band_energy_of(after, 0.8 * hz, 1.2 * hz);
            worst_reduction = std::min(worst_reduction, out.found ? 1.0 - e1 / e0 : 0.0);
            ++mixtures;
        }
        Signal pure{std::vector<double>(tmpl.waveform.size() + 700, 0.0), 44100};
        for (size_t i = 0; i < tmpl.waveform.size(); ++i) pure.samples[200 + i] = 0.8 * tmpl.waveform[i];
        worst_pure = std::max(worst_pure, rms(subtract_feedback(pure, tmpl).output.samples));
    }
    return {worst_reduction >= 0.9 && worst_pure <= 1e-6,
            fmt("worst band reduction %.4f over %zu mixtures (need 0.90), pure-template residual rms %.2e (limit 1e-6)", worst_reduction, mixtures,
                worst_pure)};
}

// 5. top-20 over 9^4 sequences equals the brute-force sort
Outcome enumeration_oracle() {
    const auto t0 = Clock::now();
    size_t equal = 0;
    for (int c = 0; c < 100; ++c) {
        Rng r{uint64_t(1000 + c)};
        std::vector<PredictionRanking> rk;
        std::vector<std::vector<std::pair<std::string, double>>> positions;
        for (int p = 0; p < 4; ++p) {
            rk.push_back(gen::ranking(r, gen::digits(), c % 2 == 0));
            std::vector<std::pair<std::string, double>> pos;
            for (const auto & e : rk.back()) pos.push_back({e.label, e.log_confidence});
            positions.push_back(pos);
        }
        const auto want = oracle::brute_force(positions);
        const auto got = enumerate_topk(rk, 20).sequences;
        bool same = got.size() == 20 && want.size() == 6561;
        for (size_t i = 0; same && i < 20; ++i) same = got[i].symbols == want[i].labels && std::abs(got[i].log_score - want[i].score) <= 1e-12;
        if (same) ++equal;
    }
    const double t = seconds_since(t0);
    return {equal == 100 && t < 10.0, fmt("%zu/100 instances identical (half with exact ties), %.2f s (limit 10)", equal, t)};
}

// 6. macro F1 and the fused word score
Outcome formula_fidelity() {
    const double f1 = macro_f1({{2, 1}, {1, 2}});
    const std::vector<std::string> abc{"a", "b", "c"};
    const std::vector<std::string> corpus_words{"abc", "cab", "bca", "abca", "cabba"};
    const auto m = train_ngram(std::string("abc cab bca abca cabba"), 3, abc, 0.01);
    const std::vector<PredictionRanking> rk{ranking_from_confidences({{"a", 0.6}, {"b", 0.3}, {"c", 0.1}}),
                                            ranking_from_confidences({{"a", 0.2}, {"b", 0.5}, {"c", 0.3}}),
                                            ranking_from_confidences({{"a", 0.25}, {"b", 0.25}, {"c", 0.5}})};
    double worst = 0.0;
    const auto fused = fuse_and_rank(rk, &m, 27).sequences;
    for (const auto & s : fused) {
        double word = 0.0;
        for (size_t p = 0; p < 3; ++p) {
            for (const auto & e : rk[p]) {
                if (e.label == s.symbols[p]) word += std::log(e.confidence);
            }
        }
        const double gram = std::log(oracle::ngram_prob(corpus_words, join_symbols(s.symbols), 3, 0.01));
        worst = std::max(worst, std::abs(s.log_score - (word + gram)));
    }
    const bool ok = f1 == 2.0 / 3.0 && fused.size() == 27 && worst <= 1e-12;
    return {ok, fmt("macro F1 %.17g (want 2/3), combined score worst error %.2e over %zu words (limit 1e-12)", f1, worst, fused.size())};
}

// 7. TopBotm beats each single microphone, which beats 3x chance
Outcome feature_set_ordering() {
    const auto t0 = Clock::now();
    const auto g = phone_geometry();
    TapSynthConfig c;
    c.snr_db = 20;
    c.seed = 1;
    const auto s = synthesize_session(g, pin_pad_layout(g), scenario::balanced_text(gen::digits(), 150, 1), 2500, c);
    EvaluationOptions o;
    o.per_class_n = 100;
    o.repetitions = 5;
    o.seed = 1;
    double f[3];
    const FeatureSet sets[3] = {FeatureSet::Top, FeatureSet::Botm, FeatureSet::TopBotm};
    for (int i = 0; i < 3; ++i) f[i] = evaluate_split(extract_dataset(s.recording, s.labels, sets[i]), o).macro_f1_mean;
    const double t = seconds_since(t0);
    const double chance3 = 3.0 / 9.0;
    const bool ok = f[2] > f[0] && f[2] > f[1] && std::min(f[0], f[1]) > chance3 && t < 300.0;
    return {ok, fmt("macro F1 top %.3f, botm %.3f, topbotm %.3f (3x chance %.3f), %.1f s (limit 300)", f[0], f[1], f[2], chance3, t)};
}

// 8. leave-one-subject-out is harder and noisier than a random split
Outcome loso_behaviour() {
    const auto g = phone_geometry();
    Dataset all;
    for (int subj = 1; subj <= 5; ++subj) {
        TapSynthConfig c;
        c.snr_db = 20;
        c.seed = uint64_t(100 + subj);
        c.subject_effect = 0.3;
        c.subject_id = "s" + std::to_string(subj);
        const auto s = synthesize_session(g, pin_pad_layout(g), scenario::balanced_text(gen::digits(), 40, uint64_t(subj)), 2500, c);
        const auto ds = extract_dataset(s.recording, s.labels, FeatureSet::TopBotm);
        all.insert(all.end(), ds.begin(), ds.end());
    }
    EvaluationOptions o;
    o.seed = 1;
    const auto split = evaluate_split(all, o);
    const auto loso = evaluate_loso(all, o);
    const bool ok = loso.macro_f1_mean <= split.macro_f1_mean && loso.macro_f1_std >= split.macro_f1_std;
    return {ok, fmt("split %.3f +- %.3f (%d reps), loso %.3f +- %.3f (%d folds)", split.macro_f1_mean, split.macro_f1_std, split.repetitions,
                    loso.macro_f1_mean, loso.macro_f1_std, loso.repetitions)};
}

std::vector<Symbols> common_words() {
    std::vector<Symbols> out;
    for (const auto & w : scenario::read_lines(kData + "/common4.txt")) out.push_back(symbols_of(w));
    return out;
}

bool non_decreasing(const std::vector<double> & v) { return std::is_sorted(v.begin(), v.end()); }

// 9. limiting each position to its top 5 or 10 letters
Outcome depth_limited(const scenario::LetterSetup & setup, const std::vector<Symbols> & words) {
    auto curve = [&](std::optional<size_t> depth) {
        return scenario::mean_recovery(setup, words, 30, 20, 3, [&](const auto & rk) { return enumerate_topk(rk, 20, depth).sequences; });
    };
    const auto d5 = curve(5), d10 = curve(10), full = curve(std::nullopt);
    const bool monotone = non_decreasing(d5) && non_decreasing(d10) && non_decreasing(full);
    const bool ok = monotone && std::abs(d10[19] - full[19]) <= 0.05;
    return {ok, fmt("recovery at 20: depth5 %.3f, depth10 %.3f, unlimited %.3f (|d10-unl| limit 0.05), curves %s", d5[19], d10[19], full[19],
                    monotone ? "non-decreasing" : "NOT monotone")};
}

// 10. trigram fusion on common words
Outcome language_model_lift(const scenario::LetterSetup & setup, const std::vector<Symbols> & words) {
    const auto m = train_ngram(scenario::read_text(kData + "/corpus.txt"), 3, gen::letters());
    const auto plain = scenario::mean_recovery(setup, words, 30, 20, 4, [](const auto & rk) { return enumerate_topk(rk, 20).sequences; });
    const auto fused = scenario::mean_recovery(setup, words, 30, 20, 4, [&](const auto & rk) { return fuse_and_rank(rk, &m, 20).sequences; });
    return {fused[19] >= plain[19],
            fmt("%zu words x 30 runs: recovery at 20 fused %.3f vs classifier-only %.3f (at 1: %.3f vs %.3f)", words.size(), fused[19], plain[19],
                fused[0], plain[0])};
}

// 11. the module suites, including the named property tests, pass within 10 min
Outcome invariant_suites() {
    const fs::path dir = fs::read_symlink("/proc/self/exe").parent_path();
    const std::vector<std::pair<std::string, std::vector<std::string>>> suites = {
        {"test_audio_io", {"AudioIoProperty.Pcm16RoundTripIsIdentity"}},
        {"test_dsp",
         {"QuefrencyProperty.ScaleInvariantTo1e9AtAudioLevels", "CrossCorrelationProperty.MatchesDefinitionBoundedAndSymmetric",
          "BandpassProperty.Linear"}},
        {"test_tap_detect", {"DetectTapsProperty.OrderedSpacedAndSlicedExactly"}},
        {"test_tdoa", {"TdoaProperty.AntisymmetricUnderChannelSwap"}},
        {"test_features", {"FeaturesProperty.ExtractionIsDeterministic"}},
        {"test_classify", {"LdaProperty.SampleOrderDoesNotMatter"}},
        {"test_inference", {"ScoreAttackProperty.CurvesAreNonDecreasingAndBounded"}},
        {"test_simulator", {"Session.DeterministicAndSeedSensitive", "SynthesizeTap.DeterministicUnderSeed"}},
        {"test_config", {"ConfigsProperty.GeometryRoundTrips"}},
        {"test_cli", {"CliSimulate.SameSeedSameBytes"}},
    };
    const auto t0 = Clock::now();
    std::string problems;
    size_t passed = 0;
    for (const auto & [name, required] : suites) {
        const fs::path bin = dir / name;
        if (!fs::exists(bin)) {
            problems += " " + name + " not built;";
            continue;
        }
        std::string listing;
        if (FILE * p = ::popen((bin.string() + " --gtest_list_tests").c_str(), "r")) {
            char buf[256];
            std::string suite;
            while (std::fgets(buf, sizeof buf, p)) {
                std::string line(buf);
                while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
                if (line.empty()) continue;
                if (line[0] != ' ') suite = line;
                else listing += " " + suite + line.substr(line.find_first_not_of(' ')) + " ";
            }
            ::pclose(p);
        }
        for (const auto & t : required) {
            if (listing.find(" " + t + " ") == std::string::npos) problems += " missing " + t + ";";
        }
        if (std::system((bin.string() + " --gtest_brief=1 > /dev/null 2>&1").c_str()) == 0) ++passed;
        else problems += " " + name + " failed;";
    }
    const double t = seconds_since(t0);
    const bool ok = problems.empty() && t < 600.0;
    return {ok, fmt("%zu/%zu suites pass, %.1f s (limit 600)%s", passed, suites.size(), t, problems.c_str())};
}

} // namespace

int main() {
    int failures = 0;
    auto report = [&](int n, const char * name, const std::function<Outcome()> & f) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception & e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("%-4s criterion %2d %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    };
    report(1, "tdoa-accuracy", tdoa_accuracy);
    report(2, "noiseless-exactness", noiseless_exactness);
    report(3, "tap-detection", tap_detection);
    report(4, "feedback-subtraction", feedback_subtraction);
    report(5, "enumeration-oracle", enumeration_oracle);
    report(6, "formula-fidelity", formula_fidelity);
    report(7, "feature-set-ordering", feature_set_ordering);
    report(8, "loso-behaviour", loso_behaviour);

    const auto setup = scenario::letter_setup(5);
    const auto words = common_words();
    report(9, "depth-limited-attack", [&] { return depth_limited(setup, words); });
    report(10, "language-model-lift", [&] { return language_model_lift(setup, words); });
    report(11, "invariant-suites", invariant_suites);

    std::printf("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
