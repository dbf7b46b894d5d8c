#pragma once

// Command implementations for the tapsense tool. Kept in a header so the test
// suite can drive commands in-process.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 internal error.

#include "tapsense/audio_io.hpp"
#include "tapsense/classify.hpp"
#include "tapsense/config.hpp"
#include "tapsense/features.hpp"
#include "tapsense/inference.hpp"
#include "tapsense/simulator.hpp"
#include "tapsense/tap_detect.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef TAPSENSE_VERSION
#define TAPSENSE_VERSION "0.1.0"
#endif

namespace tapsense::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kInternalError = 4 };

inline int exit_code_for(const Error & e) { return e.kind() == ErrorKind::Config ? kConfigError : kDataError; }

[[noreturn]] inline void config_error(const std::string & msg) { fail(ErrorKind::Config, msg); }

inline std::string sha256_hex(const std::string & data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static const char * hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

inline std::string file_digest(const fs::path & p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorKind::FileNotFound, p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline uint64_t default_seed() {
    const char * env = std::getenv("TAPSENSE_SEED");
    if (!env || !*env) return 1;
    char * end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') config_error("TAPSENSE_SEED must be a non-negative integer, got '" + std::string(env) + "'");
    return v;
}

/// State shared by one command invocation; ends up in the manifest.
struct Run {
    std::string command;
    std::vector<std::string> argv;
    uint64_t seed = 1;
    unsigned threads = 1;
    Json config = Json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::vector<std::string> targets;
    std::string started = utc_now();

    void add_input(const fs::path & p) {
        inputs.push_back(p.string());
        config["input_digests"][p.string()] = file_digest(p);
    }
};

inline void ensure_dir(const fs::path & dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_out(const fs::path & p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
    return out;
}

inline void write_manifest(const fs::path & dir, const Run & run) {
    Json m = {
        {"format", "tapsense.manifest"},
        {"format_version", 1},
        {"command", run.command},
        {"argv", run.argv},
        {"config_digest", sha256_hex(run.config.dump())},
        {"config", run.config},
        {"seed", run.seed},
        {"tool_version", TAPSENSE_VERSION},
        {"started_utc", run.started},
        {"finished_utc", utc_now()},
        {"inputs", run.inputs},
        {"outputs", run.outputs},
    };
    if (!run.targets.empty()) m["targets"] = run.targets;
    auto out = open_out(dir / "manifest.json");
    out << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Shared option groups

struct DeviceOptions {
    std::string geometry_file;
    std::string device = "phone";
};

inline void add_device_options(CLI::App * app, DeviceOptions & o) {
    app->add_option("--geometry", o.geometry_file, "Geometry JSON (see schemas/geometry.schema.json)");
    app->add_option("--device", o.device, "Built-in geometry when --geometry is absent")->check(CLI::IsMember({"phone", "tablet"}));
}

inline DeviceGeometry resolve_geometry(const DeviceOptions & o, Run & run) {
    DeviceGeometry g;
    if (!o.geometry_file.empty()) {
        run.add_input(o.geometry_file);
        g = geometry_from_json(read_json_file(o.geometry_file));
    } else {
        g = o.device == "tablet" ? tablet_geometry() : phone_geometry();
    }
    run.config["geometry"] = geometry_to_json(g);
    return g;
}

struct DataOptions {
    std::vector<std::string> wavs;
    std::vector<std::string> labels;
    std::vector<std::string> features;
    std::string feature_set = "topbotm";
};

inline void add_data_options(CLI::App * app, DataOptions & o) {
    app->add_option("--wav", o.wavs, "Session recording(s); pair each with --labels");
    app->add_option("--labels", o.labels, "Label CSV(s) matching --wav");
    app->add_option("--features", o.features, "Feature CSV(s) instead of recordings");
    app->add_option("--feature-set", o.feature_set, "top | botm | topbotm")->check(CLI::IsMember({"top", "botm", "bottom", "topbotm", "top+botm"}));
}

inline Dataset load_dataset(const DataOptions & o, Run & run) {
    const auto fs_opt = parse_feature_set(o.feature_set);
    if (!fs_opt) config_error("unknown feature set " + o.feature_set);
    if (o.wavs.size() != o.labels.size()) config_error("every --wav needs a matching --labels");
    if (o.wavs.empty() && o.features.empty()) config_error("no input data: give --wav/--labels or --features");
    run.config["feature_set"] = to_string(*fs_opt);
    Dataset ds;
    for (size_t i = 0; i < o.wavs.size(); ++i) {
        run.add_input(o.wavs[i]);
        run.add_input(o.labels[i]);
        const auto rec = load_wav(o.wavs[i]);
        const auto labels = load_labels(o.labels[i]);
        validate_labels(labels, rec);
        auto part = extract_dataset(rec, labels, *fs_opt);
        ds.insert(ds.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    for (const auto & f : o.features) {
        run.add_input(f);
        auto part = load_dataset_csv(f);
        for (auto & s : part) {
            if (s.features.dim() != feature_dim(*fs_opt)) {
                fail(ErrorKind::DimensionMismatch, f + ": feature dimension " + std::to_string(s.features.dim()) + " does not match --feature-set " +
                                                       to_string(*fs_opt));
            }
            s.features.feature_set = *fs_opt;
        }
        ds.insert(ds.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    if (ds.empty()) fail(ErrorKind::MalformedInput, "input data contains no labelled taps");
    return ds;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    DeviceOptions device;
    std::string layout_file;
    std::string layout_kind;
    std::string synth_file;
    std::string text;
    size_t pins = 0;
    std::string words_file;
    size_t digits = 0;
    size_t letters = 0;
    std::string subject = "s0";
    std::string session = "session";
    std::optional<double> snr_db;
    std::optional<double> subject_effect;
    std::string out;
};

/// Draws n distinct 4-digit PINs over digits 1-9.
inline std::vector<std::string> draw_pins(size_t n, uint64_t seed) {
    require(n <= 6561, "at most 6561 distinct PINs exist over digits 1-9");
    Rng rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> pins;
    while (pins.size() < n) {
        std::string pin;
        for (int i = 0; i < 4; ++i) pin += char('1' + rng.below(9));
        if (seen.insert(pin).second) pins.push_back(pin);
    }
    return pins;
}

inline int cmd_simulate(const SimulateOptions & o, Run & run, std::ostream & log) {
    const int modes = !o.text.empty() + (o.pins > 0) + !o.words_file.empty() + (o.digits > 0) + (o.letters > 0);
    if (modes != 1) config_error("give exactly one of --text, --pins, --words, --digits, --letters");
    if (o.out.empty()) config_error("--out is required");

    const auto g = resolve_geometry(o.device, run);
    SimulationSettings settings;
    if (!o.synth_file.empty()) {
        run.add_input(o.synth_file);
        settings = synth_from_json(read_json_file(o.synth_file), g.sample_rate_hz);
    }
    if (o.snr_db) settings.tap.snr_db = *o.snr_db;
    if (o.subject_effect) {
        if (*o.subject_effect < 0.0 || *o.subject_effect > 1.0) config_error("--subject-effect must lie in [0, 1]");
        settings.tap.subject_effect = *o.subject_effect;
    }
    settings.tap.seed = run.seed;
    settings.tap.subject_id = o.subject;
    run.config["synth"] = synth_to_json(settings);

    // Groups of consecutive taps forming one secret (PIN or word).
    std::vector<std::string> targets;
    std::vector<std::string> taps;
    const bool alphabetic = o.letters > 0 || !o.words_file.empty() ||
                            (!o.text.empty() && std::any_of(o.text.begin(), o.text.end(), [](char c) { return std::isalpha((unsigned char)c); }));
    if (!o.text.empty()) {
        targets.push_back(o.text);
    } else if (o.pins > 0) {
        targets = draw_pins(o.pins, derive_seed(run.seed, 0x9175));
    } else if (!o.words_file.empty()) {
        run.add_input(o.words_file);
        std::ifstream in(o.words_file);
        if (!in) fail(ErrorKind::FileNotFound, o.words_file);
        for (const auto & w : parse_dictionary(in)) targets.push_back(join_symbols(w));
        if (targets.empty()) fail(ErrorKind::MalformedInput, o.words_file + ": no words");
    } else {
        const size_t reps = o.digits > 0 ? o.digits : o.letters;
        const std::string alphabet = o.digits > 0 ? "123456789" : "abcdefghijklmnopqrstuvwxyz";
        for (size_t r = 0; r < reps; ++r) {
            for (char c : alphabet) taps.emplace_back(1, c);
        }
        Rng rng(derive_seed(run.seed, 0x5487));
        rng.shuffle(taps);
    }
    for (const auto & t : targets) {
        for (const auto & s : symbols_of(t)) taps.push_back(s);
    }

    KeyboardLayout layout;
    if (!o.layout_file.empty()) {
        run.add_input(o.layout_file);
        layout = layout_from_json(read_json_file(o.layout_file), g);
    } else {
        const std::string kind = o.layout_kind.empty() ? (alphabetic ? "qwerty" : "pinpad") : o.layout_kind;
        layout = kind == "qwerty" ? qwerty_layout(g) : pin_pad_layout(g);
    }
    run.config["layout"] = layout_to_json(layout);
    for (const auto & s : taps) {
        if (!layout.find(s)) fail(ErrorKind::MalformedInput, "symbol '" + s + "' is not on the layout");
    }

    const auto session = synthesize_session(g, layout, taps, settings.inter_tap_gap, settings.tap, o.session);

    const fs::path dir(o.out);
    ensure_dir(dir);
    save_wav(session.recording, dir / "session.wav");
    save_labels(session.labels, dir / "labels.csv");
    {
        auto out = open_out(dir / "truth.csv");
        out << "tap,label,onset_bottom,onset_top,true_delay,x_m,y_m\n";
        char buf[256];
        for (size_t i = 0; i < session.truths.size(); ++i) {
            const auto & t = session.truths[i];
            std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", i, t.label.c_str(), t.onset_bottom, t.onset_top, t.true_delay,
                          t.location.x, t.location.y);
            out << buf;
        }
    }
    run.outputs = {"session.wav", "labels.csv", "truth.csv"};
    if (!targets.empty()) {
        auto out = open_out(dir / "targets.csv");
        out << "target,first_tap,length\n";
        size_t first = 0;
        for (const auto & t : targets) {
            out << detail::csv_field(t) << ',' << first << ',' << t.size() << '\n';
            first += t.size();
        }
        run.outputs.push_back("targets.csv");
        run.targets = targets;
    }
    write_manifest(dir, run);
    log << "simulated " << taps.size() << " taps";
    if (!targets.empty()) log << " in " << targets.size() << " targets";
    log << " -> " << dir.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// detect

struct DetectOptions {
    std::string wav;
    std::string subject = "s0";
    std::string session = "session";
    double threshold_k = DetectorConfig{}.threshold_k;
    std::string out;
};

inline int cmd_detect(const DetectOptions & o, Run & run, std::ostream & log) {
    if (o.wav.empty() || o.out.empty()) config_error("--wav and --out are required");
    if (!(o.threshold_k > 0.0)) config_error("--threshold-k must be positive");
    run.add_input(o.wav);
    DetectorConfig dc;
    dc.threshold_k = o.threshold_k;
    run.config["threshold_k"] = o.threshold_k;
    const auto rec = load_wav(o.wav);
    const auto labels = detections_to_labels(detect_taps(rec, dc), o.subject, o.session);
    const fs::path out(o.out);
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    ensure_dir(dir);
    save_labels(labels, out);
    run.outputs = {out.filename().string()};
    write_manifest(dir, run);
    log << "detected " << labels.size() << " taps -> " << out.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    DataOptions data;
    size_t undersample = 100;
    double ridge = 1e-6;
    std::string out;
};

inline int cmd_train(const TrainOptions & o, Run & run, std::ostream & log) {
    if (o.out.empty()) config_error("--out is required");
    if (o.undersample < 1) config_error("--undersample must be at least 1");
    if (!(o.ridge > 0.0)) config_error("--ridge must be positive");
    const auto ds = load_dataset(o.data, run);
    run.config["undersample"] = o.undersample;
    run.config["ridge"] = o.ridge;

    auto model = train_lda(undersample(ds, o.undersample, derive_seed(run.seed, 0x7a1)), o.ridge);
    model.metadata = {
        {"feature_set", to_string(*parse_feature_set(o.data.feature_set))},
        {"undersample_n", o.undersample},
        {"seed", run.seed},
        {"training_samples", ds.size()},
    };
    const fs::path out(o.out);
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    ensure_dir(dir);
    {
        auto f = open_out(out);
        f << model_to_json(model).dump() << '\n';
    }
    run.outputs = {out.filename().string()};
    write_manifest(dir, run);
    log << "trained " << model.class_count() << "-class model on " << ds.size() << " taps -> " << out.string() << '\n';
    return kOk;
}

inline LdaModel load_model(const fs::path & p) {
    const auto j = read_json_file(p);
    if (j.is_object() && j.contains("format_version") && j["format_version"] != kModelFormatVersion) {
        fail(ErrorKind::UnsupportedVersion, p.string() + ": model format version " + j["format_version"].dump());
    }
    const auto v = schema_violations(j, schemas::model());
    if (!v.empty()) fail(ErrorKind::MalformedInput, p.string() + v.front().pointer + ": " + v.front().message);
    return model_from_json(j);
}

inline FeatureSet model_feature_set(const LdaModel & m) {
    if (m.metadata.contains("feature_set")) {
        if (auto fs = parse_feature_set(m.metadata["feature_set"].get<std::string>())) return *fs;
    }
    return feature_set_for_dim(m.dim());
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
    DataOptions data;
    std::string protocol = "split";
    int reps = 5;
    double train_fraction = 0.7;
    size_t undersample = 100;
    double ridge = 1e-6;
    std::string out;
};

inline void write_confusion_csv(std::ostream & out, const EvaluationReport & r) {
    out << "truth";
    for (const auto & l : r.class_labels) out << ',' << detail::csv_field(l);
    out << '\n';
    for (size_t i = 0; i < r.class_labels.size(); ++i) {
        out << detail::csv_field(r.class_labels[i]);
        for (long v : r.confusion[i]) out << ',' << v;
        out << '\n';
    }
}

inline int cmd_evaluate(const EvaluateOptions & o, Run & run, std::ostream & log) {
    if (o.out.empty()) config_error("--out is required");
    if (o.protocol != "split" && o.protocol != "loso") config_error("--protocol must be split or loso");
    if (o.reps < 1) config_error("--reps must be at least 1");
    if (!(o.train_fraction > 0.0 && o.train_fraction < 1.0)) config_error("--train-fraction must lie strictly between 0 and 1");
    if (o.undersample < 1) config_error("--undersample must be at least 1");
    const auto ds = load_dataset(o.data, run);
    EvaluationOptions eo;
    eo.train_fraction = o.train_fraction;
    eo.per_class_n = o.undersample;
    eo.repetitions = o.reps;
    eo.seed = run.seed;
    eo.ridge = o.ridge;
    eo.threads = run.threads;
    run.config["protocol"] = o.protocol;
    run.config["reps"] = o.reps;
    run.config["train_fraction"] = o.train_fraction;
    run.config["undersample"] = o.undersample;
    run.config["ridge"] = o.ridge;

    const auto report = o.protocol == "loso" ? evaluate_loso(ds, eo) : evaluate_split(ds, eo);
    const fs::path dir(o.out);
    ensure_dir(dir);
    {
        auto f = open_out(dir / "report.json");
        f << report_to_json(report).dump(2) << '\n';
    }
    {
        auto f = open_out(dir / "confusion.csv");
        write_confusion_csv(f, report);
    }
    run.outputs = {"report.json", "confusion.csv"};
    write_manifest(dir, run);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s macro F1 %.4f +- %.4f over %d %s\n", o.protocol.c_str(), report.macro_f1_mean, report.macro_f1_std,
                  report.repetitions, o.protocol == "loso" ? "folds" : "repetitions");
    log << buf;
    for (const auto & w : report.warnings) log << "warning: " << w << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// attack

struct AttackOptions {
    std::string model;
    std::string wav;
    std::string labels;
    std::string features;
    std::string targets;
    std::string mode = "pin";
    size_t attempts = 20;
    std::optional<size_t> depth;
    std::string ngram;
    int ngram_k = 3;
    double ngram_delta = 0.01;
    std::string dictionary;
    size_t pool_factor = kFusionPoolFactor;
    std::string out;
};

struct TargetSpan {
    size_t first = 0;
    size_t length = 0;
};

inline std::vector<TargetSpan> load_targets(const fs::path & p) {
    std::ifstream in(p);
    if (!in) fail(ErrorKind::FileNotFound, p.string());
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::MalformedInput, p.string() + ": empty");
    detail::strip_cr(line);
    if (line != "target,first_tap,length") fail(ErrorKind::MalformedInput, p.string() + ": header must be target,first_tap,length");
    std::vector<TargetSpan> out;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        detail::strip_cr(line);
        if (line.empty()) continue;
        const auto f = detail::split_csv_row(line);
        try {
            if (f.size() != 3) throw std::invalid_argument("width");
            out.push_back({std::stoul(f[1]), std::stoul(f[2])});
        } catch (const std::exception &) {
            fail(ErrorKind::MalformedInput, p.string() + ": row " + std::to_string(row) + " is malformed");
        }
    }
    return out;
}

inline std::vector<std::string> letters_alphabet() {
    std::vector<std::string> a;
    for (char c = 'a'; c <= 'z'; ++c) a.emplace_back(1, c);
    return a;
}

inline int cmd_attack(const AttackOptions & o, Run & run, std::ostream & log) {
    if (o.model.empty() || o.out.empty()) config_error("--model and --out are required");
    if (o.mode != "pin" && o.mode != "word" && o.mode != "dict") config_error("--mode must be pin, word or dict");
    if (o.attempts < 1) config_error("--attempts must be at least 1");
    if (o.depth && *o.depth < 1) config_error("--depth must be at least 1");
    if (o.mode == "dict" && o.dictionary.empty()) config_error("--mode dict needs --dictionary");
    if (o.ngram_k < 2) config_error("--ngram-k must be at least 2");
    if (o.ngram_delta < 0.0) config_error("--ngram-delta must be non-negative");
    if (o.pool_factor < 1) config_error("--pool-factor must be at least 1");
    if (o.features.empty() == o.wav.empty()) config_error("give either --wav/--labels or --features");
    if (!o.wav.empty() && o.labels.empty()) config_error("--wav needs --labels");

    run.add_input(o.model);
    const auto model = load_model(o.model);
    const auto fset = model_feature_set(model);
    run.config["mode"] = o.mode;
    run.config["attempts"] = o.attempts;
    run.config["depth"] = o.depth ? Json(*o.depth) : Json(nullptr);
    run.config["feature_set"] = to_string(fset);

    Dataset taps;
    if (!o.wav.empty()) {
        run.add_input(o.wav);
        run.add_input(o.labels);
        const auto rec = load_wav(o.wav);
        const auto labels = load_labels(o.labels);
        validate_labels(labels, rec);
        taps = extract_dataset(rec, labels, fset);
    } else {
        run.add_input(o.features);
        taps = load_dataset_csv(o.features);
    }
    for (const auto & t : taps) {
        if (t.features.dim() != model.dim()) fail(ErrorKind::DimensionMismatch, "tap features do not match the model dimension");
        if (!model.class_index(t.label)) fail(ErrorKind::MalformedInput, "label '" + t.label + "' is outside the model alphabet");
    }

    std::vector<TargetSpan> spans;
    if (!o.targets.empty()) {
        run.add_input(o.targets);
        spans = load_targets(o.targets);
    } else if (o.mode == "pin") {
        if (taps.size() % 4 != 0) fail(ErrorKind::MalformedInput, "tap count is not a multiple of 4; give --targets");
        for (size_t i = 0; i < taps.size(); i += 4) spans.push_back({i, 4});
    } else {
        config_error("--mode " + o.mode + " needs --targets");
    }
    for (const auto & s : spans) {
        if (s.length == 0 || s.first + s.length > taps.size()) fail(ErrorKind::MalformedInput, "target span outside the tap list");
    }

    std::optional<NgramModel> ngram;
    if (!o.ngram.empty()) {
        run.add_input(o.ngram);
        std::ifstream in(o.ngram);
        if (!in) fail(ErrorKind::FileNotFound, o.ngram);
        std::stringstream ss;
        ss << in.rdbuf();
        ngram = train_ngram(ss.str(), o.ngram_k, model.class_labels, o.ngram_delta);
        run.config["ngram_k"] = o.ngram_k;
        run.config["ngram_delta"] = o.ngram_delta;
        run.config["pool_factor"] = o.pool_factor;
    }
    std::vector<Symbols> dictionary;
    if (o.mode == "dict") {
        run.add_input(o.dictionary);
        std::ifstream in(o.dictionary);
        if (!in) fail(ErrorKind::FileNotFound, o.dictionary);
        dictionary = parse_dictionary(in);
    }
    if (o.depth && *o.depth > model.class_count()) config_error("--depth exceeds the model alphabet size");

    std::vector<Symbols> truths(spans.size());
    std::vector<std::vector<ScoredSequence>> guesses(spans.size());
    std::vector<std::vector<std::string>> warnings(spans.size());
    detail::run_parallel(spans.size(), run.threads, [&](size_t t) {
        std::vector<PredictionRanking> rankings;
        for (size_t i = spans[t].first; i < spans[t].first + spans[t].length; ++i) {
            truths[t].push_back(taps[i].label);
            rankings.push_back(predict(model, taps[i].features));
        }
        if (o.mode == "dict") {
            guesses[t] = dictionary_attack(rankings, dictionary, o.attempts, &warnings[t]);
        } else {
            guesses[t] = fuse_and_rank(rankings, ngram ? &*ngram : nullptr, o.attempts, o.depth, o.pool_factor).sequences;
        }
    });

    const auto result = score_attack(guesses, truths, o.attempts);
    const fs::path dir(o.out);
    ensure_dir(dir);
    {
        auto f = open_out(dir / "ranks.csv");
        write_ranks_csv(f, result);
    }
    {
        auto f = open_out(dir / "recovery.csv");
        write_recovery_csv(f, result);
    }
    {
        auto f = open_out(dir / "guesses.csv");
        f << "target,rank,guess,log_score\n";
        char buf[64];
        for (size_t t = 0; t < guesses.size(); ++t) {
            for (size_t r = 0; r < guesses[t].size(); ++r) {
                std::snprintf(buf, sizeof buf, "%.17g", guesses[t][r].log_score);
                f << detail::csv_field(join_symbols(truths[t])) << ',' << r + 1 << ',' << detail::csv_field(join_symbols(guesses[t][r].symbols)) << ','
                  << buf << '\n';
            }
        }
    }
    run.outputs = {"ranks.csv", "recovery.csv", "guesses.csv"};
    write_manifest(dir, run);

    std::set<std::string> shown;
    for (const auto & w : warnings) {
        for (const auto & line : w) {
            if (shown.insert(line).second) log << "warning: " << line << '\n';
        }
    }
    char buf[160];
    const auto at = [&](size_t m) { return result.recovery_curve[std::min(m, o.attempts) - 1]; };
    std::snprintf(buf, sizeof buf, "%zu targets: recovered %.1f%% at attempt 1, %.1f%% at 10, %.1f%% at %zu\n", spans.size(), 100.0 * at(1),
                  100.0 * at(10), 100.0 * at(o.attempts), o.attempts);
    log << buf;
    return kOk;
}

// ---------------------------------------------------------------------------
// tdoa-map

struct TdoaMapOptions {
    DeviceOptions device;
    double step_mm = 8.0;
    std::string out;
};

inline int cmd_tdoa_map(const TdoaMapOptions & o, Run & run, std::ostream & log) {
    if (o.out.empty()) config_error("--out is required");
    if (!(o.step_mm > 0.0)) config_error("--step must be positive");
    const auto g = resolve_geometry(o.device, run);
    run.config["step_mm"] = o.step_mm;
    const auto map = tdoa_map(g, o.step_mm / 1000.0);
    const fs::path out(o.out);
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    ensure_dir(dir);
    {
        auto f = open_out(out);
        for (const auto & row : map) {
            for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
            f << '\n';
        }
    }
    run.outputs = {out.filename().string()};
    write_manifest(dir, run);
    log << "wrote " << map.size() << " x " << (map.empty() ? 0 : map.front().size()) << " delay map -> " << out.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(const std::vector<std::string> & args, std::ostream & out, std::ostream & err);

struct PipelineOptions {
    size_t digits = 100;
    size_t pins = 50;
    std::string out;
};

inline int cmd_pipeline(const PipelineOptions & o, Run & run_state, std::ostream & out, std::ostream & err) {
    if (o.out.empty()) config_error("--out is required");
    if (o.digits < 2 || o.pins < 1) config_error("--digits must be at least 2 and --pins at least 1");
    const fs::path dir(o.out);
    const std::string seed = std::to_string(run_state.seed);
    const std::string threads = std::to_string(run_state.threads);
    const std::string attack_seed = std::to_string(derive_seed(run_state.seed, 0xa77));
    const std::vector<std::vector<std::string>> steps = {
        {"simulate", "--digits", std::to_string(o.digits), "--seed", seed, "--out", (dir / "simulate-train").string()},
        {"simulate", "--pins", std::to_string(o.pins), "--seed", attack_seed, "--session", "attack", "--out", (dir / "simulate-attack").string()},
        {"train", "--wav", (dir / "simulate-train" / "session.wav").string(), "--labels", (dir / "simulate-train" / "labels.csv").string(), "--seed",
         seed, "--out", (dir / "train" / "model.json").string()},
        {"evaluate", "--wav", (dir / "simulate-train" / "session.wav").string(), "--labels", (dir / "simulate-train" / "labels.csv").string(),
         "--seed", seed, "--threads", threads, "--out", (dir / "evaluate").string()},
        {"attack", "--model", (dir / "train" / "model.json").string(), "--wav", (dir / "simulate-attack" / "session.wav").string(), "--labels",
         (dir / "simulate-attack" / "labels.csv").string(), "--targets", (dir / "simulate-attack" / "targets.csv").string(), "--mode", "pin",
         "--threads", threads, "--out", (dir / "attack").string()},
    };
    for (const auto & step : steps) {
        out << "$ tapsense";
        for (const auto & a : step) out << ' ' << a;
        out << '\n';
        const int code = run(step, out, err);
        if (code != kOk) return code;
    }
    run_state.config["digits"] = o.digits;
    run_state.config["pins"] = o.pins;
    run_state.outputs = {"simulate-train", "simulate-attack", "train", "evaluate", "attack"};
    ensure_dir(dir);
    write_manifest(dir, run_state);
    return kOk;
}

inline int run(const std::vector<std::string> & args, std::ostream & out, std::ostream & err) {
    CLI::App app{"Keystroke inference from dual-microphone tap recordings", "tapsense"};
    app.set_version_flag("--version", TAPSENSE_VERSION);
    app.require_subcommand(1);

    Run state;
    state.argv = args;
    std::optional<uint64_t> seed;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    auto common = [&](CLI::App * sub) {
        sub->add_option("--seed", seed, "Run seed (default: $TAPSENSE_SEED or 1)");
        sub->add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);
    };

    SimulateOptions sim;
    auto * s = app.add_subcommand("simulate", "Synthesize a two-microphone tap session with ground truth");
    add_device_options(s, sim.device);
    s->add_option("--layout", sim.layout_file, "Layout JSON");
    s->add_option("--layout-kind", sim.layout_kind, "Built-in layout when --layout is absent")->check(CLI::IsMember({"pinpad", "qwerty"}));
    s->add_option("--synth", sim.synth_file, "Synthesis settings JSON");
    s->add_option("--text", sim.text, "Type this symbol sequence once");
    s->add_option("--pins", sim.pins, "Type N distinct random 4-digit PINs");
    s->add_option("--words", sim.words_file, "Type every word of this file (one per line)");
    s->add_option("--digits", sim.digits, "Tap each digit 1-9 N times, shuffled");
    s->add_option("--letters", sim.letters, "Tap each letter a-z N times, shuffled");
    s->add_option("--subject", sim.subject, "Subject id");
    s->add_option("--session", sim.session, "Session id");
    s->add_option("--snr-db", sim.snr_db, "Override the synthesis SNR");
    s->add_option("--subject-effect", sim.subject_effect, "Override the per-subject fingerprint perturbation");
    s->add_option("--out", sim.out, "Output directory")->required();
    common(s);

    DetectOptions det;
    auto * d = app.add_subcommand("detect", "Detect tap onsets in a recording");
    d->add_option("--wav", det.wav, "Recording")->required();
    d->add_option("--subject", det.subject, "Subject id written to the labels");
    d->add_option("--session", det.session, "Session id written to the labels");
    d->add_option("--threshold-k", det.threshold_k, "MAD multiplier of the onset threshold");
    d->add_option("--out", det.out, "Output label CSV")->required();
    common(d);

    TrainOptions tr;
    auto * t = app.add_subcommand("train", "Train an LDA model");
    add_data_options(t, tr.data);
    t->add_option("--undersample", tr.undersample, "Training samples kept per class");
    t->add_option("--ridge", tr.ridge, "Relative singular-value floor");
    t->add_option("--out", tr.out, "Output model JSON")->required();
    common(t);

    EvaluateOptions ev;
    auto * e = app.add_subcommand("evaluate", "Estimate macro F1 by repeated split or leave-one-subject-out");
    add_data_options(e, ev.data);
    e->add_option("--protocol", ev.protocol, "split | loso");
    e->add_option("--reps", ev.reps, "Repetitions of the split protocol");
    e->add_option("--train-fraction", ev.train_fraction, "Training share of every class");
    e->add_option("--undersample", ev.undersample, "Training samples kept per class");
    e->add_option("--ridge", ev.ridge, "Relative singular-value floor");
    e->add_option("--out", ev.out, "Output directory")->required();
    common(e);

    AttackOptions at;
    auto * a = app.add_subcommand("attack", "Rank PIN / word guesses and score recovery");
    a->add_option("--model", at.model, "Model JSON")->required();
    a->add_option("--wav", at.wav, "Session recording");
    a->add_option("--labels", at.labels, "Session label CSV");
    a->add_option("--features", at.features, "Feature CSV instead of a recording");
    a->add_option("--targets", at.targets, "Target CSV (target,first_tap,length)");
    a->add_option("--mode", at.mode, "pin | word | dict");
    a->add_option("--attempts", at.attempts, "Guesses per target");
    a->add_option("--depth", at.depth, "Labels considered per position");
    a->add_option("--ngram", at.ngram, "Corpus for an n-gram language model");
    a->add_option("--ngram-k", at.ngram_k, "n-gram order");
    a->add_option("--ngram-delta", at.ngram_delta, "Additive smoothing");
    a->add_option("--pool-factor", at.pool_factor, "Candidate pool multiplier for language-model fusion");
    a->add_option("--dictionary", at.dictionary, "Word list for --mode dict");
    a->add_option("--out", at.out, "Output directory")->required();
    common(a);

    TdoaMapOptions tm;
    auto * m = app.add_subcommand("tdoa-map", "Write the integer iso-delay map of a device");
    add_device_options(m, tm.device);
    m->add_option("--step", tm.step_mm, "Grid step in millimetres");
    m->add_option("--out", tm.out, "Output CSV")->required();
    common(m);

    PipelineOptions pl;
    auto * p = app.add_subcommand("pipeline", "simulate, train, evaluate and attack in one run");
    p->add_option("--digits", pl.digits, "Training taps per digit");
    p->add_option("--pins", pl.pins, "PINs in the attack session");
    p->add_option("--out", pl.out, "Output directory")->required();
    common(p);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError & ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        state.seed = seed ? *seed : default_seed();
        state.threads = threads;
        auto dispatch = [&](const char * name, auto && fn) {
            state.command = name;
            return fn();
        };
        if (s->parsed()) return dispatch("simulate", [&] { return cmd_simulate(sim, state, out); });
        if (d->parsed()) return dispatch("detect", [&] { return cmd_detect(det, state, out); });
        if (t->parsed()) return dispatch("train", [&] { return cmd_train(tr, state, out); });
        if (e->parsed()) return dispatch("evaluate", [&] { return cmd_evaluate(ev, state, out); });
        if (a->parsed()) return dispatch("attack", [&] { return cmd_attack(at, state, out); });
        if (m->parsed()) return dispatch("tdoa-map", [&] { return cmd_tdoa_map(tm, state, out); });
        if (p->parsed()) return dispatch("pipeline", [&] { return cmd_pipeline(pl, state, out, err); });
    } catch (const Error & ex) {
        err << "tapsense: " << ex.what() << '\n';
        return exit_code_for(ex);
    } catch (const std::exception & ex) {
        err << "tapsense: internal error: " << ex.what() << '\n';
        return kInternalError;
    }
    return kInternalError;
}

inline int main(int argc, char ** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace tapsense::cli
