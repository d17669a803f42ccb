#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "canadv/error.hpp"
#include "canadv/pipeline.hpp"
#include "test_support.hpp"

using namespace canadv;

namespace {

const char* const kSeeds = R"("seeds": {"trace": 1, "fdia": 2, "split": 3, "init": 4, "shuffle": 5, "retrain": 6})";

std::string small_config(const std::string& output_dir) {
    std::ostringstream os;
    os << "{\"output_dir\": \"" << output_dir << "\", " << kSeeds << R"(,
        "traffic": {"duration_s": 40},
        "model": {"hidden_dim": 4},
        "training": {"epochs": 1, "batch_size": 8},
        "attacks": {"fgsm_epsilons": [0.05, 0.1], "bim_epsilons": [0.05], "bim_iterations": 2},
        "defense": {"batch_n": 4, "max_iterations": 2, "minibatch_size": 4},
        "eval": {"optimizers": ["adam", "sgd"]}})";
    return os.str();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::string> sorted_lines(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    std::sort(lines.begin(), lines.end());
    return lines;
}

struct CliRun {
    int status = 0;
    std::string out;
    std::string err;
};

CliRun run_cli(const test::TempDir& dir, const std::string& args) {
    const auto out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
    const std::string cmd = std::string(CANADV_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
    const int raw = std::system(cmd.c_str());
    CliRun r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

}  // namespace

TEST(Config, ReportsEveryProblemAtOnce) {
    const std::string text = std::string("{") + kSeeds + R"(,
        "training": {"epochs": 0, "batch_size": -1, "optimzer": "adam"},
        "model": {"hidden_dim": "big"},
        "bogus": 1})";
    try {
        parse_run_config(text);
        FAIL();
    } catch (const ConfigError& e) {
        const auto& p = e.problems();
        auto mentions = [&](const std::string& needle) {
            return std::any_of(p.begin(), p.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
        };
        EXPECT_TRUE(mentions("training.optimzer"));
        EXPECT_TRUE(mentions("model.hidden_dim"));
        EXPECT_TRUE(mentions("bogus"));
        EXPECT_GE(p.size(), 3u);
    }
}

TEST(Config, ValidationCollectsRangeErrors) {
    RunConfig cfg;
    cfg.training.epochs = -1;
    cfg.training.batch_size = 0;
    cfg.attacks.fgsm_epsilons = {0.2, 0.1};
    cfg.defense.mode = "both";
    try {
        validate_run_config(cfg);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_GE(e.problems().size(), 4u);
    }
}

TEST(Config, SeedsMustBeExplicit) {
    EXPECT_THROW(parse_run_config(R"({"seeds": {"trace": 1}})"), ConfigError);
    EXPECT_THROW(parse_run_config("{}"), ConfigError);
    EXPECT_THROW(parse_run_config("{not json"), ConfigError);
}

TEST(Config, DumpThenParseIsStable) {
    const auto cfg = parse_run_config(small_config("out"), "/base");
    EXPECT_EQ(cfg.output_dir, "out");
    EXPECT_EQ(cfg.model.hidden_dim, 4);
    const auto again = parse_run_config(dump_run_config(cfg), "/base");
    EXPECT_EQ(dump_run_config(again), dump_run_config(cfg));
}

TEST(Seeds, DerivedFromBaseAreConsecutive) {
    const auto s = Seeds::derived_from(100);
    EXPECT_EQ(s.trace, 100u);
    EXPECT_EQ(s.fdia, 101u);
    EXPECT_EQ(s.split, 102u);
    EXPECT_EQ(s.init, 103u);
    EXPECT_EQ(s.shuffle, 104u);
    EXPECT_EQ(s.retrain, 105u);
}

TEST(Cli, MissingDbcFailsWithNonzeroStatus) {
    test::TempDir dir("cli_dbc");
    std::ofstream(dir.file("trace.csv")) << "timestamp,can_id,dlc,payload\n";
    const auto r = run_cli(dir, "decode --dbc " + dir.file("nope.dbc") + " --trace " + dir.file("trace.csv") +
                                    " --out " + dir.file("decoded.csv"));
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.err.find("nope.dbc"), std::string::npos) << r.err;
}

TEST(Cli, EmptyTraceDecodesWithAWarning) {
    test::TempDir dir("cli_empty");
    std::ofstream(dir.file("trace.csv")).flush();
    const auto r = run_cli(dir, "decode --trace " + dir.file("trace.csv") + " --out " + dir.file("decoded.csv"));
    EXPECT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.err.find("warning"), std::string::npos) << r.err;
}

TEST(Cli, EvalWithoutCheckpointNamesThePath) {
    test::TempDir dir("cli_eval");
    std::ofstream(dir.file("cfg.json")) << small_config(dir.file("run"));
    const auto r = run_cli(dir, "eval -q --config " + dir.file("cfg.json"));
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.err.find("model.ckpt"), std::string::npos) << r.err;
}

TEST(Cli, BadConfigExitsWithUsageStatus) {
    test::TempDir dir("cli_badcfg");
    std::ofstream(dir.file("cfg.json")) << R"({"training": {"epochs": -3}})";
    const auto r = run_cli(dir, "gen -q --config " + dir.file("cfg.json"));
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.err.find("config error"), std::string::npos);
    EXPECT_EQ(run_cli(dir, "frobnicate").status, 1);
}

TEST(Cli, GeneratedTraceDecodesBackToTheSameSignals) {
    test::TempDir dir("cli_decode");
    std::string cfg = small_config(dir.file("run"));
    cfg.replace(cfg.find("\"duration_s\": 40"), 16, "\"duration_s\": 20, \"emit_traces\": true");
    std::ofstream(dir.file("cfg.json")) << cfg;
    ASSERT_EQ(run_cli(dir, "gen -q --config " + dir.file("cfg.json")).status, 0);
    const auto r = run_cli(dir, "decode --trace " + dir.file("run/raw_trace.csv") + " --out " + dir.file("again.csv"));
    ASSERT_EQ(r.status, 0) << r.err;
    // Rows sharing a timestamp may come out in a different order.
    EXPECT_EQ(sorted_lines(dir.file("again.csv")), sorted_lines(dir.file("run/decoded_trace.csv")));
}

TEST(Cli, FullPipelineIsByteDeterministic) {
    test::TempDir dir("cli_determinism");
    std::string outputs[2];
    for (int k = 0; k < 2; ++k) {
        const auto run = dir.file("run" + std::to_string(k));
        std::ofstream(dir.file("cfg.json")) << small_config(run);
        for (const char* cmd : {"gen", "train", "attack", "defend", "eval"}) {
            const auto r = run_cli(dir, std::string(cmd) + " -q --config " + dir.file("cfg.json") + " --seed 11");
            ASSERT_EQ(r.status, 0) << cmd << ": " << r.err;
        }
        for (const char* f : {"train_metrics.csv", "sweep.csv", "robustness.csv", "eval_metrics.csv", "history.csv"}) {
            outputs[k] += slurp(run + "/" + f);
        }
        outputs[k] += slurp(run + "/test.bin");
    }
    EXPECT_FALSE(outputs[0].empty());
    EXPECT_EQ(outputs[0], outputs[1]);
}
