#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "canadv/error.hpp"
#include "canadv/pipeline.hpp"

namespace {

enum ExitCode : int { ok = 0, usage_error = 1, runtime_error = 2 };

struct RunOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    bool quiet = false;
};

void add_run_options(CLI::App* cmd, RunOptions& opts) {
    cmd->add_option("--config", opts.config_path, "JSON run document")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "Derive every named seed from this base");
    cmd->add_option("--out", opts.output_dir, "Override output_dir");
    cmd->add_flag("-q,--quiet", opts.quiet, "Suppress progress messages");
}

canadv::RunConfig resolve_config(const RunOptions& opts) {
    auto cfg = opts.config_path.empty() ? canadv::RunConfig{} : canadv::load_run_config(opts.config_path);
    if (opts.seed) cfg.seeds = canadv::Seeds::derived_from(*opts.seed);
    if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
    canadv::validate_run_config(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAN bus FDIA detection, adversarial attacks and adversarial retraining"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "canadv 0.1.0");

    std::string dbc_path, trace_path, decoded_out;
    auto* decode = app.add_subcommand("decode", "Decode a raw CAN trace into signal values");
    decode->add_option("--dbc", dbc_path, "DBC file (default: built-in catalog)");
    decode->add_option("--trace", trace_path, "Raw trace CSV")->required();
    decode->add_option("--out", decoded_out, "Decoded CSV to write")->required();

    RunOptions opts;
    using Runner = canadv::CommandResult (*)(const canadv::RunConfig&, const canadv::Logger&);
    const std::pair<const char*, const char*> descriptions[] = {
        {"gen", "Generate traffic, inject FDIA and write the dataset splits"},
        {"train", "Train the LSTM detector"},
        {"attack", "Sweep FGSM/BIM budgets and write adversarial test sets"},
        {"defend", "Adversarially retrain the detector"},
        {"eval", "Score checkpoints and compare optimizers"},
    };
    const Runner runners[] = {canadv::run_gen, canadv::run_train, canadv::run_attack, canadv::run_defend,
                              canadv::run_eval};
    std::vector<std::pair<CLI::App*, Runner>> run_commands;
    for (std::size_t i = 0; i < std::size(runners); ++i) {
        auto* cmd = app.add_subcommand(descriptions[i].first, descriptions[i].second);
        add_run_options(cmd, opts);
        run_commands.emplace_back(cmd, runners[i]);
    }
    // decode accepts --config and --seed too, for symmetry; neither changes its output.
    std::string decode_config;
    std::optional<std::uint64_t> decode_seed;
    decode->add_option("--config", decode_config, "JSON run document (traffic.dbc is used when --dbc is absent)")
        ->check(CLI::ExistingFile);
    decode->add_option("--seed", decode_seed, "Ignored");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage_error;
    }

    const canadv::Logger log = [&](const std::string& msg) {
        if (!opts.quiet) std::cerr << msg << '\n';
    };

    try {
        if (decode->parsed()) {
            if (dbc_path.empty() && !decode_config.empty()) dbc_path = canadv::load_run_config(decode_config).traffic.dbc_path;
            const auto stats = canadv::run_decode(dbc_path, trace_path, decoded_out);
            for (const auto& w : stats.warnings) std::cerr << "warning: " << w << '\n';
            std::cerr << stats.decoded_frames << " of " << stats.frames << " frames decoded, " << stats.samples
                      << " samples\n";
            return ok;
        }
        for (const auto& [cmd, runner] : run_commands) {
            if (!cmd->parsed()) continue;
            const auto cfg = resolve_config(opts);
            const auto result = runner(cfg, log);
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
            for (const auto& a : result.artifacts) std::cout << a << '\n';
            return ok;
        }
    } catch (const canadv::ConfigError& e) {
        std::cerr << "config error:\n";
        for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
        return usage_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return runtime_error;
    }
    return usage_error;
}
