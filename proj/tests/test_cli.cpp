#include "cli.hpp"

#include "support/tempdir.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace tapsense;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result tapsense_cmd(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

size_t line_count(const fs::path & p) {
    const auto text = slurp(p);
    return size_t(std::count(text.begin(), text.end(), '\n'));
}

Json manifest_of(const fs::path & dir) { return read_json_file(dir / "manifest.json"); }

// Small training set shared by the tests below: 12 repetitions of digits 1-9.
class CliData : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli");
        const auto r = tapsense_cmd({"simulate", "--digits", "12", "--seed", "3", "--out", (*dir_ / "train").string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static std::string wav() { return (*dir_ / "train" / "session.wav").string(); }
    static std::string labels() { return (*dir_ / "train" / "labels.csv").string(); }
    static inline TempDir * dir_ = nullptr;
};

} // namespace

TEST(CliSimulate, TextGivesOneTapPerSymbol) {
    TempDir d("cli_text");
    const auto r = tapsense_cmd({"simulate", "--text", "123", "--out", (d / "s").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_labels(d / "s" / "labels.csv").size(), 3u);
    EXPECT_EQ(line_count(d / "s" / "truth.csv"), 4u);
    EXPECT_EQ(slurp(d / "s" / "targets.csv"), "target,first_tap,length\n123,0,3\n");
}

TEST(CliSimulate, TwoHundredPins) {
    TempDir d("cli_pins");
    const auto r = tapsense_cmd({"simulate", "--pins", "200", "--seed", "7", "--out", (d / "s").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto labels = load_labels(d / "s" / "labels.csv");
    EXPECT_EQ(labels.size(), 800u);
    const auto m = manifest_of(d / "s");
    ASSERT_EQ(m["targets"].size(), 200u);
    std::set<std::string> unique;
    for (const auto & t : m["targets"]) {
        const auto pin = t.get<std::string>();
        ASSERT_EQ(pin.size(), 4u);
        ASSERT_TRUE(std::all_of(pin.begin(), pin.end(), [](char c) { return c >= '1' && c <= '9'; })) << pin;
        unique.insert(pin);
    }
    EXPECT_EQ(unique.size(), 200u);
    for (size_t i = 0; i < 8; ++i) EXPECT_EQ(labels[i].label, std::string(1, m["targets"][i / 4].get<std::string>()[i % 4]));
}

TEST(CliSimulate, SameSeedSameBytes) {
    TempDir d("cli_det");
    for (const char * name : {"a", "b"}) {
        ASSERT_EQ(tapsense_cmd({"simulate", "--pins", "5", "--seed", "11", "--out", (d / name).string()}).code, 0);
    }
    ASSERT_EQ(tapsense_cmd({"simulate", "--pins", "5", "--seed", "12", "--out", (d / "c").string()}).code, 0);
    EXPECT_EQ(slurp(d / "a" / "session.wav"), slurp(d / "b" / "session.wav"));
    EXPECT_EQ(slurp(d / "a" / "labels.csv"), slurp(d / "b" / "labels.csv"));
    EXPECT_NE(slurp(d / "a" / "session.wav"), slurp(d / "c" / "session.wav"));
    EXPECT_EQ(manifest_of(d / "a")["config_digest"], manifest_of(d / "b")["config_digest"]);
}

TEST(CliSimulate, SeedFromEnvironment) {
    TempDir d("cli_env");
    ::setenv("TAPSENSE_SEED", "42", 1);
    const auto r = tapsense_cmd({"simulate", "--text", "12", "--out", (d / "s").string()});
    ::setenv("TAPSENSE_SEED", "forty", 1);
    const auto bad = tapsense_cmd({"simulate", "--text", "12", "--out", (d / "t").string()});
    ::unsetenv("TAPSENSE_SEED");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(manifest_of(d / "s")["seed"], 42);
    EXPECT_EQ(bad.code, cli::kConfigError);
}

TEST(CliManifest, ValidatesAndListsOutputs) {
    TempDir d("cli_manifest");
    ASSERT_EQ(tapsense_cmd({"simulate", "--text", "hello", "--out", (d / "s").string()}).code, 0);
    const auto m = manifest_of(d / "s");
    const auto v = schema_violations(m, schemas::manifest());
    EXPECT_TRUE(v.empty()) << (v.empty() ? "" : v.front().pointer + " " + v.front().message);
    EXPECT_EQ(m["command"], "simulate");
    EXPECT_EQ(m["config_digest"].get<std::string>().size(), 64u);
    for (const auto & f : m["outputs"]) EXPECT_TRUE(fs::exists(d / "s" / f.get<std::string>())) << f;
    // letters pick the QWERTY layout
    EXPECT_EQ(m["config"]["layout"]["kind"], "qwerty26");
}

TEST(CliExitCodes, ConfigDataInternal) {
    TempDir d("cli_codes");
    // parse problems and bad option values are configuration errors
    EXPECT_EQ(tapsense_cmd({"simulate", "--bogus"}).code, cli::kConfigError);
    EXPECT_EQ(tapsense_cmd({"simulate", "--text", "1", "--pins", "2", "--out", (d / "x").string()}).code, cli::kConfigError);
    EXPECT_EQ(tapsense_cmd({"simulate", "--text", "1", "--subject-effect", "2", "--out", (d / "x").string()}).code, cli::kConfigError);
    spit(d / "geom.json", "{\"format\": \"tapsense.geometry\"}");
    const auto g = tapsense_cmd({"tdoa-map", "--geometry", (d / "geom.json").string(), "--out", (d / "m.csv").string()});
    EXPECT_EQ(g.code, cli::kConfigError);
    EXPECT_NE(g.err.find("/"), std::string::npos) << g.err;
    // unreadable or inconsistent data
    EXPECT_EQ(tapsense_cmd({"detect", "--wav", (d / "none.wav").string(), "--out", (d / "l.csv").string()}).code, cli::kDataError);
    EXPECT_EQ(tapsense_cmd({"simulate", "--text", "1x", "--layout-kind", "pinpad", "--out", (d / "x").string()}).code, cli::kDataError);
    spit(d / "model.json", "{\"format\": \"tapsense.model\", \"format_version\": 1}");
    spit(d / "f.csv", "label,f0\n1,0.5\n");
    EXPECT_EQ(tapsense_cmd({"attack", "--model", (d / "model.json").string(), "--features", (d / "f.csv").string(), "--out", (d / "a").string()}).code,
              cli::kDataError);
    EXPECT_EQ(cli::exit_code_for(Error(ErrorKind::Config, "x")), cli::kConfigError);
    EXPECT_EQ(cli::exit_code_for(Error(ErrorKind::NoSignal, "x")), cli::kDataError);
    EXPECT_EQ(cli::kInternalError, 4);
    EXPECT_EQ(tapsense_cmd({"--version"}).code, 0);
}

TEST(CliTdoaMap, PhoneBisectorRowIsZero) {
    TempDir d("cli_map");
    const auto r = tapsense_cmd({"tdoa-map", "--step", "8", "--out", (d / "map.csv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto expected = tdoa_map(phone_geometry(), 0.008);
    std::ifstream in(d / "map.csv");
    std::string line;
    size_t rows = 0;
    while (std::getline(in, line)) {
        ASSERT_LT(rows, expected.size());
        std::string want;
        for (size_t i = 0; i < expected[rows].size(); ++i) want += (i ? "," : "") + std::to_string(expected[rows][i]);
        EXPECT_EQ(line, want) << "row " << rows;
        ++rows;
    }
    EXPECT_EQ(rows, expected.size());
    EXPECT_TRUE(fs::exists(d / "manifest.json"));
    EXPECT_EQ(tapsense_cmd({"tdoa-map", "--step", "0", "--out", (d / "z.csv").string()}).code, cli::kConfigError);
}

TEST(CliTdoaMap, TabletRuns) {
    TempDir d("cli_map_tab");
    ASSERT_EQ(tapsense_cmd({"tdoa-map", "--device", "tablet", "--out", (d / "map.csv").string()}).code, 0);
    const auto expected = tdoa_map(tablet_geometry(), 0.008);
    EXPECT_EQ(line_count(d / "map.csv"), expected.size());
}

TEST_F(CliData, TrainIsDeterministicAndCoversNineDigits) {
    TempDir d("cli_train");
    for (const char * name : {"a", "b"}) {
        const auto r = tapsense_cmd({"train", "--wav", wav(), "--labels", labels(), "--seed", "5", "--out", (d / name / "model.json").string()});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(slurp(d / "a" / "model.json"), slurp(d / "b" / "model.json"));
    const auto model = cli::load_model(d / "a" / "model.json");
    EXPECT_EQ(model.class_labels, (std::vector<std::string>{"1", "2", "3", "4", "5", "6", "7", "8", "9"}));
    EXPECT_EQ(model.metadata["feature_set"], "topbotm");
    EXPECT_EQ(model.metadata["seed"], 5);
}

TEST_F(CliData, MonoRecordingCannotFeedTopBotm) {
    TempDir d("cli_mono");
    auto rec = load_wav(wav());
    rec.channels.resize(1);
    rec.channel_roles.resize(1);
    save_wav(rec, d / "mono.wav");
    const auto r = tapsense_cmd({"train", "--wav", (d / "mono.wav").string(), "--labels", labels(), "--out", (d / "m.json").string()});
    EXPECT_EQ(r.code, cli::kDataError);
    EXPECT_NE(r.err.find("missing TopMic channel"), std::string::npos) << r.err;
    const auto ok = tapsense_cmd(
        {"train", "--wav", (d / "mono.wav").string(), "--labels", labels(), "--feature-set", "botm", "--out", (d / "m.json").string()});
    EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST_F(CliData, EvaluateWritesReportAndRejectsSingleSubjectLoso) {
    TempDir d("cli_eval");
    const auto r = tapsense_cmd({"evaluate", "--wav", wav(), "--labels", labels(), "--reps", "2", "--out", (d / "e").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = read_json_file(d / "e" / "report.json");
    EXPECT_TRUE(schema_violations(report, schemas::evaluation_report()).empty());
    EXPECT_EQ(report_to_json(report_from_json(report)), report);
    EXPECT_GT(report["macro_f1_mean"].get<double>(), 0.5);
    EXPECT_EQ(line_count(d / "e" / "confusion.csv"), 10u);

    const auto loso = tapsense_cmd({"evaluate", "--wav", wav(), "--labels", labels(), "--protocol", "loso", "--out", (d / "l").string()});
    EXPECT_EQ(loso.code, cli::kDataError);
    EXPECT_NE(loso.err.find("two subjects"), std::string::npos) << loso.err;
}

TEST_F(CliData, AttackHonoursDepthAndAttempts) {
    TempDir d("cli_attack");
    ASSERT_EQ(tapsense_cmd({"train", "--wav", wav(), "--labels", labels(), "--out", (d / "model.json").string()}).code, 0);
    ASSERT_EQ(tapsense_cmd({"simulate", "--pins", "6", "--seed", "9", "--session", "attack", "--out", (d / "s").string()}).code, 0);
    const std::vector<std::string> base = {"attack",
                                           "--model",
                                           (d / "model.json").string(),
                                           "--wav",
                                           (d / "s" / "session.wav").string(),
                                           "--labels",
                                           (d / "s" / "labels.csv").string(),
                                           "--targets",
                                           (d / "s" / "targets.csv").string()};

    auto args = base;
    args.insert(args.end(), {"--attempts", "30", "--out", (d / "full").string()});
    auto r = tapsense_cmd(args);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(line_count(d / "full" / "ranks.csv"), 7u);
    EXPECT_EQ(line_count(d / "full" / "recovery.csv"), 31u);
    EXPECT_EQ(line_count(d / "full" / "guesses.csv"), 1u + 6 * 30);

    args = base;
    args.insert(args.end(), {"--depth", "1", "--attempts", "30", "--out", (d / "d1").string()});
    r = tapsense_cmd(args);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(line_count(d / "d1" / "guesses.csv"), 1u + 6);

    args = base;
    args.insert(args.end(), {"--depth", "10", "--out", (d / "bad").string()});
    EXPECT_EQ(tapsense_cmd(args).code, cli::kConfigError);
    args = base;
    args.insert(args.end(), {"--mode", "dict", "--out", (d / "bad").string()});
    EXPECT_EQ(tapsense_cmd(args).code, cli::kConfigError);
}

TEST_F(CliData, AttackRejectsForeignLabels) {
    TempDir d("cli_foreign");
    ASSERT_EQ(tapsense_cmd({"train", "--wav", wav(), "--labels", labels(), "--out", (d / "model.json").string()}).code, 0);
    ASSERT_EQ(tapsense_cmd({"simulate", "--text", "abcd", "--out", (d / "s").string()}).code, 0);
    const auto r = tapsense_cmd({"attack", "--model", (d / "model.json").string(), "--wav", (d / "s" / "session.wav").string(), "--labels",
                                 (d / "s" / "labels.csv").string(), "--out", (d / "a").string()});
    EXPECT_EQ(r.code, cli::kDataError);
    EXPECT_NE(r.err.find("alphabet"), std::string::npos) << r.err;
}

TEST(CliPipeline, RunsEndToEnd) {
    TempDir d("cli_pipeline");
    const auto r = tapsense_cmd({"pipeline", "--digits", "10", "--pins", "5", "--seed", "2", "--out", (d / "p").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char * sub : {"", "simulate-train", "simulate-attack", "train", "evaluate", "attack"}) {
        const auto m = manifest_of(d / "p" / sub);
        EXPECT_TRUE(schema_violations(m, schemas::manifest()).empty()) << sub;
    }
    EXPECT_EQ(line_count(d / "p" / "attack" / "ranks.csv"), 6u);
}

TEST(CliInputs, CommandsDoNotTouchTheirInputs) {
    TempDir d("cli_inputs");
    ASSERT_EQ(tapsense_cmd({"simulate", "--text", "1234", "--out", (d / "s").string()}).code, 0);
    const auto before = slurp(d / "s" / "session.wav");
    ASSERT_EQ(tapsense_cmd({"detect", "--wav", (d / "s" / "session.wav").string(), "--out", (d / "det" / "labels.csv").string()}).code, 0);
    EXPECT_EQ(slurp(d / "s" / "session.wav"), before);
    EXPECT_EQ(load_labels(d / "det" / "labels.csv").size(), 4u);
}
