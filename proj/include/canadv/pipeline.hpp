#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "canadv/attacks.hpp"
#include "canadv/can_codec.hpp"
#include "canadv/defense.hpp"
#include "canadv/fdia.hpp"
#include "canadv/nnet.hpp"
#include "canadv/traffic.hpp"

namespace canadv {

// Every random stream of a run, by name.
struct Seeds {
    std::uint64_t trace = 1;
    std::uint64_t fdia = 2;
    std::uint64_t split = 3;
    std::uint64_t init = 4;
    std::uint64_t shuffle = 5;
    std::uint64_t retrain = 6;

    // --seed S: trace=S, fdia=S+1, split=S+2, init=S+3, shuffle=S+4, retrain=S+5.
    static Seeds derived_from(std::uint64_t base);
};

struct TrafficSettings {
    std::string dbc_path;     // empty: built-in catalog
    std::string decoded_csv;  // empty: synthetic trace
    double duration_s = 1903.0;
    double rate_hz = 10.0;
    double window_s = 10.0;
    double stride_s = 1.0;
    double message_period_s = 0.05;
    bool emit_traces = false;
};

struct ModelSettings {
    int hidden_dim = 128;
    double threshold = 0.5;
};

struct TrainingSettings {
    int epochs = 50;
    int batch_size = 32;
    std::string optimizer = "adam";
    double learning_rate = 0.0;  // 0: optimizer default
};

struct AttackSettings {
    std::vector<double> fgsm_epsilons{0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3};
    std::vector<double> bim_epsilons{0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3};
    int bim_iterations = 5;
    double bim_alpha_fraction = 0.2;
    bool clamp_to_domain = true;
    bool span_mask = false;
    bool frozen_gradient = false;
    // Operating point: smallest swept epsilon reaching this success rate.
    double target_success = 0.9;
};

struct DefenseSettings {
    int batch_n = 200;
    int max_iterations = 100;
    int stop_window = 5;
    double stop_threshold = 0.99;
    int minibatch_size = 32;
    std::vector<std::string> attacks{"fgsm", "bim"};
    // "combined": one model, attacks alternate per iteration.
    // "separate": one model per attack.
    std::string mode = "combined";
};

struct EvalSettings {
    bool optimizer_comparison = true;
    std::vector<std::string> optimizers{"adam", "rmsprop", "adagrad", "sgd"};
};

struct RunConfig {
    std::string output_dir = "run";
    Seeds seeds;
    TrafficSettings traffic;
    FdiaConfig fdia;
    ModelSettings model;
    TrainingSettings training;
    AttackSettings attacks;
    DefenseSettings defense;
    EvalSettings eval;
};

// Reads a JSON run document. Unknown keys and invalid values are collected and
// reported together in one ConfigError. `base_dir` resolves relative paths.
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& cfg);
void validate_run_config(const RunConfig& cfg);

using Logger = std::function<void(const std::string&)>;

struct CommandResult {
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;
};

struct DecodeStats {
    std::size_t frames = 0;
    std::size_t decoded_frames = 0;
    std::size_t skipped_frames = 0;
    std::size_t samples = 0;
    std::vector<std::string> warnings;
};

// Raw trace CSV -> decoded CSV (timestamp,signal_name,value). An empty dbc_path
// selects the built-in catalog.
DecodeStats run_decode(const std::string& dbc_path, const std::string& trace_csv, const std::string& out_path);

CommandResult run_gen(const RunConfig& cfg, const Logger& log = {});
CommandResult run_train(const RunConfig& cfg, const Logger& log = {});
CommandResult run_attack(const RunConfig& cfg, const Logger& log = {});
CommandResult run_defend(const RunConfig& cfg, const Logger& log = {});
CommandResult run_eval(const RunConfig& cfg, const Logger& log = {});

// Catalog named by the settings, or the built-in one.
SignalCatalog catalog_for(const TrafficSettings& settings);

// The whole dataset path in memory: trace -> grid -> windows -> FDIA -> split.
// Windows stay in physical units.
DatasetSplit build_dataset(const RunConfig& cfg, const SignalCatalog& catalog);

}  // namespace canadv
