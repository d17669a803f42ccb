#include "canadv/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "canadv/error.hpp"
#include "canadv/eval.hpp"
#include "json.hpp"

namespace canadv {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "canadv 0.1.0";

// Collects problems while reading one JSON object, then flags unknown keys.
class Section {
public:
    Section(const json& node, std::string path, std::vector<std::string>& problems)
        : node_(node), path_(std::move(path)), problems_(problems) {
        if (!node_.is_object()) problems_.push_back(path_ + " must be an object");
    }

    template <typename T>
    void read(const std::string& key, T& target) {
        seen_.insert(key);
        if (!node_.is_object() || !node_.contains(key)) return;
        try {
            target = node_.at(key).get<T>();
        } catch (const json::exception&) {
            problems_.push_back(qualified(key) + " has the wrong type");
        }
    }

    // Nested object; returns an empty object when absent.
    json child(const std::string& key) {
        seen_.insert(key);
        if (!node_.is_object() || !node_.contains(key)) return json::object();
        return node_.at(key);
    }

    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() {
        if (!node_.is_object()) return;
        for (const auto& [key, value] : node_.items()) {
            if (seen_.count(key) == 0) problems_.push_back("unknown key " + qualified(key));
        }
    }

private:
    const json& node_;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

std::string resolve(const std::string& path, const std::string& base_dir) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

std::string out_path(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.output_dir) / name).string(); }

std::ofstream open_text(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << std::setprecision(17);
    return out;
}

void require_file(const std::string& path, const std::string& produced_by) {
    if (!fs::exists(path)) throw IoError("missing " + path + " (run `" + produced_by + "` first)");
}

void prepare_output(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.output_dir + ": " + ec.message());
    auto out = open_text(out_path(cfg, "config.json"));
    out << dump_run_config(cfg) << '\n';
}

ordered_json seeds_json(const Seeds& s) {
    return ordered_json{{"trace", s.trace},     {"fdia", s.fdia},       {"split", s.split},
                        {"init", s.init},       {"shuffle", s.shuffle}, {"retrain", s.retrain}};
}

void write_manifest(const RunConfig& cfg, const std::string& command, CommandResult& result, double wall_time_s) {
    const std::string path = out_path(cfg, "manifest_" + command + ".json");
    ordered_json m;
    m["command"] = command;
    m["version"] = kToolVersion;
    m["config_hash"] = hex64(fnv1a(dump_run_config(cfg)));
    m["config"] = ordered_json::parse(dump_run_config(cfg));
    m["seeds"] = seeds_json(cfg.seeds);
    m["artifacts"] = result.artifacts;
    m["warnings"] = result.warnings;
    m["wall_time_s"] = wall_time_s;
    auto out = open_text(path);
    out << m.dump(2) << '\n';
    result.artifacts.push_back(path);
}

std::vector<std::string> signal_names_of(const SignalCatalog& catalog) { return catalog.signal_names(); }

struct LoadedSplits {
    std::vector<std::string> names;
    std::vector<SampleWindow> train, val, test;
};

LoadedSplits load_splits(const RunConfig& cfg) {
    LoadedSplits s;
    const std::array<std::pair<const char*, std::vector<SampleWindow>*>, 3> parts{
        {{"train.bin", &s.train}, {"val.bin", &s.val}, {"test.bin", &s.test}}};
    for (const auto& [name, target] : parts) {
        const auto path = out_path(cfg, name);
        require_file(path, "gen");
        auto file = load_windows(path);
        if (file.units != Units::physical) throw IoError(path + " is not in physical units");
        if (!s.names.empty() && s.names != file.names) throw IoError(path + " has a different signal list");
        s.names = std::move(file.names);
        *target = std::move(file.windows);
    }
    return s;
}

DetectorModel load_model(const std::string& path, const char* produced_by) {
    require_file(path, produced_by);
    return load_checkpoint(path);
}

AttackConfig base_attack(const AttackSettings& s, AttackKind kind) {
    AttackConfig a;
    a.kind = kind;
    a.iterations = s.bim_iterations;
    a.clamp_to_domain = s.clamp_to_domain;
    a.span_mask = s.span_mask;
    a.frozen_gradient = s.frozen_gradient;
    return a;
}

ordered_json attack_json(const AttackConfig& a) {
    return ordered_json{{"kind", to_string(a.kind)},         {"epsilon", a.epsilon},
                        {"alpha", a.alpha},                  {"iterations", a.iterations},
                        {"clamp_to_domain", a.clamp_to_domain}, {"span_mask", a.span_mask},
                        {"frozen_gradient", a.frozen_gradient}};
}

AttackConfig attack_from_json(const json& j) {
    AttackConfig a;
    a.kind = attack_from_string(j.at("kind").get<std::string>());
    a.epsilon = j.at("epsilon").get<double>();
    a.alpha = j.at("alpha").get<double>();
    a.iterations = j.at("iterations").get<int>();
    a.clamp_to_domain = j.at("clamp_to_domain").get<bool>();
    a.span_mask = j.at("span_mask").get<bool>();
    a.frozen_gradient = j.at("frozen_gradient").get<bool>();
    return a;
}

OptimizerSettings optimizer_settings(const std::string& name, double learning_rate) {
    auto s = OptimizerSettings::defaults(optimizer_from_string(name));
    if (learning_rate > 0.0) s.learning_rate = learning_rate;
    return s;
}

void write_metrics_header(std::ostream& out) {
    out << "model,split,accuracy,precision,recall,f1,macro_precision,macro_recall,macro_f1,tp,fp,tn,fn\n";
}

void write_metrics_row(std::ostream& out, const std::string& model, const std::string& split, const MetricsReport& m) {
    out << model << ',' << split << ',' << m.accuracy << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ','
        << m.macro_precision << ',' << m.macro_recall << ',' << m.macro_f1 << ',' << m.tp << ',' << m.fp << ','
        << m.tn << ',' << m.fn << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

Seeds Seeds::derived_from(std::uint64_t base) {
    return Seeds{base, base + 1, base + 2, base + 3, base + 4, base + 5};
}

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    std::vector<std::string> problems;
    Section top(root, "", problems);
    top.read("output_dir", cfg.output_dir);

    {
        const auto node = top.child("seeds");
        Section s(node, "seeds", problems);
        s.read("trace", cfg.seeds.trace);
        s.read("fdia", cfg.seeds.fdia);
        s.read("split", cfg.seeds.split);
        s.read("init", cfg.seeds.init);
        s.read("shuffle", cfg.seeds.shuffle);
        s.read("retrain", cfg.seeds.retrain);
        s.finish();
        for (const char* k : {"trace", "fdia", "split", "init", "shuffle", "retrain"}) {
            if (!root.contains("seeds") || !node.is_object() || !node.contains(k)) {
                problems.push_back(std::string("seeds.") + k + " must be given explicitly");
            }
        }
    }
    {
        const auto node = top.child("traffic");
        Section s(node, "traffic", problems);
        s.read("dbc", cfg.traffic.dbc_path);
        s.read("decoded_csv", cfg.traffic.decoded_csv);
        s.read("duration_s", cfg.traffic.duration_s);
        s.read("rate_hz", cfg.traffic.rate_hz);
        s.read("window_s", cfg.traffic.window_s);
        s.read("stride_s", cfg.traffic.stride_s);
        s.read("message_period_s", cfg.traffic.message_period_s);
        s.read("emit_traces", cfg.traffic.emit_traces);
        s.finish();
        cfg.traffic.dbc_path = resolve(cfg.traffic.dbc_path, base_dir);
        cfg.traffic.decoded_csv = resolve(cfg.traffic.decoded_csv, base_dir);
    }
    {
        const auto node = top.child("fdia");
        Section s(node, "fdia", problems);
        s.read("attack_span_s", cfg.fdia.attack_span_s);
        s.read("target_signals", cfg.fdia.target_signals);
        s.read("fraction_attacked", cfg.fdia.fraction_attacked);
        s.finish();
    }
    {
        const auto node = top.child("model");
        Section s(node, "model", problems);
        s.read("hidden_dim", cfg.model.hidden_dim);
        s.read("threshold", cfg.model.threshold);
        s.finish();
    }
    {
        const auto node = top.child("training");
        Section s(node, "training", problems);
        s.read("epochs", cfg.training.epochs);
        s.read("batch_size", cfg.training.batch_size);
        s.read("optimizer", cfg.training.optimizer);
        s.read("learning_rate", cfg.training.learning_rate);
        s.finish();
    }
    {
        const auto node = top.child("attacks");
        Section s(node, "attacks", problems);
        s.read("fgsm_epsilons", cfg.attacks.fgsm_epsilons);
        s.read("bim_epsilons", cfg.attacks.bim_epsilons);
        s.read("bim_iterations", cfg.attacks.bim_iterations);
        s.read("bim_alpha_fraction", cfg.attacks.bim_alpha_fraction);
        s.read("clamp_to_domain", cfg.attacks.clamp_to_domain);
        s.read("span_mask", cfg.attacks.span_mask);
        s.read("frozen_gradient", cfg.attacks.frozen_gradient);
        s.read("target_success", cfg.attacks.target_success);
        s.finish();
    }
    {
        const auto node = top.child("defense");
        Section s(node, "defense", problems);
        s.read("batch_n", cfg.defense.batch_n);
        s.read("max_iterations", cfg.defense.max_iterations);
        s.read("stop_window", cfg.defense.stop_window);
        s.read("stop_threshold", cfg.defense.stop_threshold);
        s.read("minibatch_size", cfg.defense.minibatch_size);
        s.read("attacks", cfg.defense.attacks);
        s.read("mode", cfg.defense.mode);
        s.finish();
    }
    {
        const auto node = top.child("eval");
        Section s(node, "eval", problems);
        s.read("optimizer_comparison", cfg.eval.optimizer_comparison);
        s.read("optimizers", cfg.eval.optimizers);
        s.finish();
    }
    top.finish();
    if (!problems.empty()) throw ConfigError(problems);
    validate_run_config(cfg);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    auto base = fs::path(path).parent_path().string();
    if (base.empty()) base = ".";
    auto cfg = parse_run_config(buf.str(), base);
    cfg.output_dir = resolve(cfg.output_dir, base);
    return cfg;
}

void validate_run_config(const RunConfig& cfg) {
    std::vector<std::string> p;
    const auto& t = cfg.traffic;
    if (cfg.output_dir.empty()) p.emplace_back("output_dir must not be empty");
    if (!t.dbc_path.empty() && !fs::exists(t.dbc_path)) p.push_back("traffic.dbc " + t.dbc_path + " does not exist");
    if (!t.decoded_csv.empty() && !fs::exists(t.decoded_csv)) {
        p.push_back("traffic.decoded_csv " + t.decoded_csv + " does not exist");
    }
    if (t.decoded_csv.empty() && !(t.duration_s > 10.0)) p.emplace_back("traffic.duration_s must exceed 10");
    if (!(t.rate_hz > 0.0)) p.emplace_back("traffic.rate_hz must be positive");
    if (!(t.window_s > 0.0)) p.emplace_back("traffic.window_s must be positive");
    if (!(t.stride_s > 0.0)) p.emplace_back("traffic.stride_s must be positive");
    if (!(t.message_period_s > 0.0)) p.emplace_back("traffic.message_period_s must be positive");
    if (!(cfg.fdia.attack_span_s > 0.0 && cfg.fdia.attack_span_s <= 10.0)) {
        p.emplace_back("fdia.attack_span_s must be in (0,10]");
    }
    if (cfg.fdia.attack_span_s > t.window_s) p.emplace_back("fdia.attack_span_s must not exceed traffic.window_s");
    if (!(cfg.fdia.fraction_attacked > 0.0 && cfg.fdia.fraction_attacked <= 1.0)) {
        p.emplace_back("fdia.fraction_attacked must be in (0,1]");
    }
    if (cfg.model.hidden_dim < 1) p.emplace_back("model.hidden_dim must be >= 1");
    if (!(cfg.model.threshold > 0.0 && cfg.model.threshold < 1.0)) p.emplace_back("model.threshold must be in (0,1)");
    if (cfg.training.epochs < 0) p.emplace_back("training.epochs must be >= 0");
    if (cfg.training.batch_size < 1) p.emplace_back("training.batch_size must be >= 1");
    if (cfg.training.learning_rate < 0.0) p.emplace_back("training.learning_rate must be >= 0");
    try {
        (void)optimizer_from_string(cfg.training.optimizer);
    } catch (const ConfigError&) {
        p.push_back("training.optimizer '" + cfg.training.optimizer + "' is not one of sgd, adam, rmsprop, adagrad");
    }
    const auto& a = cfg.attacks;
    for (const auto* list : {&a.fgsm_epsilons, &a.bim_epsilons}) {
        const char* name = list == &a.fgsm_epsilons ? "attacks.fgsm_epsilons" : "attacks.bim_epsilons";
        if (list->empty()) p.push_back(std::string(name) + " must not be empty");
        if (!std::is_sorted(list->begin(), list->end())) p.push_back(std::string(name) + " must be ascending");
        for (double e : *list) {
            if (!(e > 0.0)) p.push_back(std::string(name) + " entries must be positive");
        }
    }
    if (a.bim_iterations < 1) p.emplace_back("attacks.bim_iterations must be >= 1");
    if (!(a.bim_alpha_fraction > 0.0 && a.bim_alpha_fraction <= 1.0)) {
        p.emplace_back("attacks.bim_alpha_fraction must be in (0,1]");
    }
    if (!(a.target_success > 0.0 && a.target_success <= 1.0)) p.emplace_back("attacks.target_success must be in (0,1]");
    const auto& d = cfg.defense;
    if (d.batch_n < 1) p.emplace_back("defense.batch_n must be >= 1");
    if (d.max_iterations < 1) p.emplace_back("defense.max_iterations must be >= 1");
    if (d.stop_window < 1) p.emplace_back("defense.stop_window must be >= 1");
    if (!(d.stop_threshold > 0.0 && d.stop_threshold <= 1.0)) p.emplace_back("defense.stop_threshold must be in (0,1]");
    if (d.minibatch_size < 1) p.emplace_back("defense.minibatch_size must be >= 1");
    if (d.attacks.empty()) p.emplace_back("defense.attacks must not be empty");
    for (const auto& name : d.attacks) {
        if (name != "fgsm" && name != "bim") p.push_back("defense.attacks entry '" + name + "' is not fgsm or bim");
    }
    if (d.mode != "combined" && d.mode != "separate") p.emplace_back("defense.mode must be combined or separate");
    for (const auto& name : cfg.eval.optimizers) {
        try {
            (void)optimizer_from_string(name);
        } catch (const ConfigError&) {
            p.push_back("eval.optimizers entry '" + name + "' is unknown");
        }
    }
    if (cfg.eval.optimizer_comparison && cfg.eval.optimizers.empty()) {
        p.emplace_back("eval.optimizers must not be empty when optimizer_comparison is on");
    }
    if (!p.empty()) throw ConfigError(p);
}

std::string dump_run_config(const RunConfig& cfg) {
    ordered_json j;
    j["output_dir"] = cfg.output_dir;
    j["seeds"] = seeds_json(cfg.seeds);
    j["traffic"] = ordered_json{{"dbc", cfg.traffic.dbc_path},
                                {"decoded_csv", cfg.traffic.decoded_csv},
                                {"duration_s", cfg.traffic.duration_s},
                                {"rate_hz", cfg.traffic.rate_hz},
                                {"window_s", cfg.traffic.window_s},
                                {"stride_s", cfg.traffic.stride_s},
                                {"message_period_s", cfg.traffic.message_period_s},
                                {"emit_traces", cfg.traffic.emit_traces}};
    j["fdia"] = ordered_json{{"attack_span_s", cfg.fdia.attack_span_s},
                             {"target_signals", cfg.fdia.target_signals},
                             {"fraction_attacked", cfg.fdia.fraction_attacked}};
    j["model"] = ordered_json{{"hidden_dim", cfg.model.hidden_dim}, {"threshold", cfg.model.threshold}};
    j["training"] = ordered_json{{"epochs", cfg.training.epochs},
                                 {"batch_size", cfg.training.batch_size},
                                 {"optimizer", cfg.training.optimizer},
                                 {"learning_rate", cfg.training.learning_rate}};
    j["attacks"] = ordered_json{{"fgsm_epsilons", cfg.attacks.fgsm_epsilons},
                                {"bim_epsilons", cfg.attacks.bim_epsilons},
                                {"bim_iterations", cfg.attacks.bim_iterations},
                                {"bim_alpha_fraction", cfg.attacks.bim_alpha_fraction},
                                {"clamp_to_domain", cfg.attacks.clamp_to_domain},
                                {"span_mask", cfg.attacks.span_mask},
                                {"frozen_gradient", cfg.attacks.frozen_gradient},
                                {"target_success", cfg.attacks.target_success}};
    j["defense"] = ordered_json{{"batch_n", cfg.defense.batch_n},
                                {"max_iterations", cfg.defense.max_iterations},
                                {"stop_window", cfg.defense.stop_window},
                                {"stop_threshold", cfg.defense.stop_threshold},
                                {"minibatch_size", cfg.defense.minibatch_size},
                                {"attacks", cfg.defense.attacks},
                                {"mode", cfg.defense.mode}};
    j["eval"] = ordered_json{{"optimizer_comparison", cfg.eval.optimizer_comparison},
                             {"optimizers", cfg.eval.optimizers}};
    return j.dump(2);
}

SignalCatalog catalog_for(const TrafficSettings& settings) {
    if (settings.dbc_path.empty()) return default_catalog();
    return load_dbc(settings.dbc_path);
}

DatasetSplit build_dataset(const RunConfig& cfg, const SignalCatalog& catalog) {
    SignalSeries series;
    if (cfg.traffic.decoded_csv.empty()) {
        GeneratorOptions options;
        options.message_period_s = cfg.traffic.message_period_s;
        series = generate_trace(catalog, cfg.traffic.duration_s, cfg.seeds.trace, options);
    } else {
        series = ingest_decoded_csv(cfg.traffic.decoded_csv, catalog);
    }
    const auto grid = resample_series(series, cfg.traffic.rate_hz);
    auto windows = build_windows(grid, cfg.traffic.window_s, cfg.traffic.stride_s);
    Rng fdia_rng(cfg.seeds.fdia);
    auto crafted = craft_attack_dataset(windows, grid.names, catalog, cfg.fdia, fdia_rng);
    return split_dataset(std::move(crafted), cfg.seeds.split);
}

DecodeStats run_decode(const std::string& dbc_path, const std::string& trace_csv, const std::string& out_path) {
    const auto catalog = dbc_path.empty() ? default_catalog() : load_dbc(dbc_path);
    const auto frames = read_raw_trace(trace_csv);
    const auto decoded = decode_frames(frames, catalog);
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    write_decoded_csv(out, decoded.samples);
    if (!out) throw IoError("failed writing " + out_path);

    DecodeStats stats;
    stats.frames = frames.size();
    stats.decoded_frames = decoded.decoded_frames;
    stats.skipped_frames = decoded.skipped_frames;
    stats.samples = decoded.samples.size();
    if (frames.empty()) stats.warnings.emplace_back("trace " + trace_csv + " contains no frames");
    if (decoded.skipped_frames > 0) {
        stats.warnings.push_back(std::to_string(decoded.skipped_frames) + " frames with unknown ids were skipped");
    }
    return stats;
}

CommandResult run_gen(const RunConfig& cfg, const Logger& log) {
    const auto started = std::chrono::steady_clock::now();
    validate_run_config(cfg);
    prepare_output(cfg);
    CommandResult result;
    const auto catalog = catalog_for(cfg.traffic);
    say(log, "catalog: " + std::to_string(catalog.message_count()) + " messages, " +
                 std::to_string(catalog.signal_count()) + " signals");

    if (cfg.traffic.emit_traces && cfg.traffic.decoded_csv.empty()) {
        GeneratorOptions options;
        options.message_period_s = cfg.traffic.message_period_s;
        const auto series = generate_trace(catalog, cfg.traffic.duration_s, cfg.seeds.trace, options);
        const auto raw_path = out_path(cfg, "raw_trace.csv");
        const auto decoded_path = out_path(cfg, "decoded_trace.csv");
        auto raw = open_text(raw_path);
        write_raw_trace(raw, encode_trace(series, catalog));
        auto decoded = open_text(decoded_path);
        write_decoded_csv(decoded, series);
        result.artifacts.push_back(raw_path);
        result.artifacts.push_back(decoded_path);
    }

    const auto split = build_dataset(cfg, catalog);
    const auto names = signal_names_of(catalog);
    const std::array<std::pair<const char*, const std::vector<SampleWindow>*>, 3> parts{
        {{"train", &split.train}, {"val", &split.validation}, {"test", &split.test}}};
    const auto summary_path = out_path(cfg, "dataset_summary.csv");
    auto summary = open_text(summary_path);
    summary << "split,windows,attack,normal,timesteps,signals\n";
    for (const auto& [name, windows] : parts) {
        const auto path = out_path(cfg, std::string(name) + ".bin");
        save_windows(path, WindowFile{names, Units::physical, *windows});
        result.artifacts.push_back(path);
        std::size_t attacks = 0;
        for (const auto& w : *windows) attacks += w.label == Label::Attack;
        summary << name << ',' << windows->size() << ',' << attacks << ',' << windows->size() - attacks << ','
                << (windows->empty() ? 0 : windows->front().timesteps()) << ',' << names.size() << '\n';
        say(log, std::string(name) + ": " + std::to_string(windows->size()) + " windows");
    }
    result.artifacts.push_back(summary_path);
    write_manifest(cfg, "gen", result, seconds_since(started));
    return result;
}

CommandResult run_train(const RunConfig& cfg, const Logger& log) {
    const auto started = std::chrono::steady_clock::now();
    validate_run_config(cfg);
    const auto data = load_splits(cfg);
    prepare_output(cfg);
    CommandResult result;
    const auto catalog = catalog_for(cfg.traffic);
    const FeatureScaler scaler(catalog, data.names);
    const auto train = scaler.normalize(data.train);
    const auto val = scaler.normalize(data.val);
    const auto test = scaler.normalize(data.test);

    ModelConfig mc;
    mc.input_dim = static_cast<int>(data.names.size());
    mc.hidden_dim = cfg.model.hidden_dim;
    mc.seq_len = static_cast<int>(train.front().timesteps());
    mc.init_seed = cfg.seeds.init;
    mc.threshold = cfg.model.threshold;
    auto model = init_model(mc);
    say(log, "model: " + std::to_string(model.parameter_count()) + " parameters");

    FitConfig fc;
    fc.epochs = cfg.training.epochs;
    fc.batch_size = cfg.training.batch_size;
    fc.optimizer = optimizer_settings(cfg.training.optimizer, cfg.training.learning_rate);
    fc.shuffle_seed = cfg.seeds.shuffle;
    const auto fit_started = std::chrono::steady_clock::now();
    const auto fitted = fit(model, train, val, fc);
    const double fit_time = seconds_since(fit_started);
    if (!fitted.history.empty()) {
        const auto& last = fitted.history.back();
        say(log, "epoch " + std::to_string(last.epoch) + ": val_acc " + std::to_string(last.val_acc));
    }

    const auto ckpt = out_path(cfg, "model.ckpt");
    save_checkpoint(ckpt, model);
    result.artifacts.push_back(ckpt);
    const auto history_path = out_path(cfg, "history.csv");
    {
        auto h = open_text(history_path);
        write_history_csv(h, fitted.history);
    }
    result.artifacts.push_back(history_path);
    if (!fitted.history.empty()) {
        for (auto& p : emit_curves(fitted.history, out_path(cfg, "curves_" + cfg.training.optimizer))) {
            result.artifacts.push_back(std::move(p));
        }
    }
    const auto metrics_path = out_path(cfg, "train_metrics.csv");
    {
        auto m = open_text(metrics_path);
        write_metrics_header(m);
        write_metrics_row(m, "model", "train", compute_metrics(model, train));
        write_metrics_row(m, "model", "val", compute_metrics(model, val));
        write_metrics_row(m, "model", "test", compute_metrics(model, test));
    }
    result.artifacts.push_back(metrics_path);
    const auto timing_path = out_path(cfg, "train_timing.csv");
    {
        auto t = open_text(timing_path);
        t << "optimizer,time_s\n" << cfg.training.optimizer << ',' << fit_time << '\n';
    }
    result.artifacts.push_back(timing_path);
    write_manifest(cfg, "train", result, seconds_since(started));
    return result;
}

CommandResult run_attack(const RunConfig& cfg, const Logger& log) {
    const auto started = std::chrono::steady_clock::now();
    validate_run_config(cfg);
    const auto data = load_splits(cfg);
    const auto model = load_model(out_path(cfg, "model.ckpt"), "train");
    prepare_output(cfg);
    CommandResult result;
    const auto catalog = catalog_for(cfg.traffic);
    const FeatureScaler scaler(catalog, data.names);
    const auto test = scaler.normalize(data.test);

    const auto sweep_path = out_path(cfg, "sweep.csv");
    const auto summary_path = out_path(cfg, "attack_summary.csv");
    auto sweep_out = open_text(sweep_path);
    auto summary = open_text(summary_path);
    summary << "method,success_rate,accuracy,epsilon,alpha,iterations,time_s\n";
    std::vector<SweepRow> all_rows;
    ordered_json points = ordered_json::array();

    for (const auto kind : {AttackKind::fgsm, AttackKind::bim}) {
        const auto base = base_attack(cfg.attacks, kind);
        const auto& eps = kind == AttackKind::fgsm ? cfg.attacks.fgsm_epsilons : cfg.attacks.bim_epsilons;
        const auto rows = epsilon_sweep(model, test, base, eps, cfg.attacks.bim_alpha_fraction);
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        const auto& chosen = operating_point(rows, cfg.attacks.target_success);
        const auto attack = config_for(base, chosen);
        const auto ev = attack_success_rate(model, test, attack);
        say(log, attack.describe() + ": success " + std::to_string(ev.success_rate));
        summary << to_string(kind) << ',' << ev.success_rate << ',' << ev.post_attack_accuracy << ',' << attack.epsilon
                << ',' << (kind == AttackKind::bim ? attack.alpha : 0.0) << ','
                << (kind == AttackKind::bim ? attack.iterations : 1) << ',' << ev.wall_time_s << '\n';
        points.push_back(attack_json(attack));

        const auto adv_path = out_path(cfg, "adv_test_" + to_string(kind) + ".bin");
        save_windows(adv_path, WindowFile{data.names, Units::normalized, perturb_windows(model, test, attack)});
        auto sidecar_json = attack_json(attack);
        sidecar_json["source"] = "test.bin";
        sidecar_json["model"] = "model.ckpt";
        sidecar_json["seeds"] = seeds_json(cfg.seeds);
        auto sidecar = open_text(out_path(cfg, "adv_test_" + to_string(kind) + ".json"));
        sidecar << sidecar_json.dump(2) << '\n';
        result.artifacts.push_back(adv_path);
        result.artifacts.push_back(out_path(cfg, "adv_test_" + to_string(kind) + ".json"));
    }
    write_sweep_csv(sweep_out, all_rows);
    const auto points_path = out_path(cfg, "attack_points.json");
    {
        auto p = open_text(points_path);
        p << points.dump(2) << '\n';
    }
    result.artifacts.insert(result.artifacts.end(), {sweep_path, summary_path, points_path});
    write_manifest(cfg, "attack", result, seconds_since(started));
    return result;
}

CommandResult run_defend(const RunConfig& cfg, const Logger& log) {
    const auto started = std::chrono::steady_clock::now();
    validate_run_config(cfg);
    const auto data = load_splits(cfg);
    const auto initial = load_model(out_path(cfg, "model.ckpt"), "train");
    const auto points_path = out_path(cfg, "attack_points.json");
    require_file(points_path, "attack");
    std::vector<AttackConfig> points;
    {
        std::ifstream in(points_path);
        try {
            for (const auto& j : json::parse(in)) points.push_back(attack_from_json(j));
        } catch (const json::exception& e) {
            throw IoError("cannot read " + points_path + ": " + e.what());
        }
    }
    auto find_point = [&](const std::string& name) {
        const auto kind = attack_from_string(name);
        for (const auto& p : points) {
            if (p.kind == kind) return p;
        }
        throw IoError(points_path + " has no operating point for " + name);
    };
    std::vector<AttackConfig> attacks;
    for (const auto& name : cfg.defense.attacks) attacks.push_back(find_point(name));

    prepare_output(cfg);
    CommandResult result;
    const auto catalog = catalog_for(cfg.traffic);
    const FeatureScaler scaler(catalog, data.names);
    const auto train = scaler.normalize(data.train);
    const auto val = scaler.normalize(data.val);
    const auto test = scaler.normalize(data.test);

    RetrainConfig rc;
    rc.batch_n = cfg.defense.batch_n;
    rc.max_iterations = cfg.defense.max_iterations;
    rc.stop_window = cfg.defense.stop_window;
    rc.stop_threshold = cfg.defense.stop_threshold;
    rc.minibatch_size = cfg.defense.minibatch_size;
    rc.seed = cfg.seeds.retrain;
    rc.optimizer = optimizer_settings(cfg.training.optimizer, cfg.training.learning_rate);

    std::vector<std::pair<std::string, std::vector<AttackConfig>>> runs;
    if (cfg.defense.mode == "combined") {
        runs.emplace_back("", attacks);
    } else {
        for (const auto& a : attacks) runs.emplace_back("_" + to_string(a.kind), std::vector<AttackConfig>{a});
    }

    const auto robustness_path = out_path(cfg, "robustness.csv");
    auto robustness = open_text(robustness_path);
    robustness << "model,attack,epsilon,alpha,iterations,clean_acc,adv_acc\n";
    auto report_rows = [&](const std::string& label, const RobustnessReport& report) {
        for (const auto& r : report.rows) {
            const bool iterative = r.attack.kind == AttackKind::bim;
            robustness << label << ',' << to_string(r.attack.kind) << ',' << r.attack.epsilon << ','
                       << (iterative ? r.attack.alpha : 0.0) << ',' << (iterative ? r.attack.iterations : 1) << ','
                       << r.clean_acc << ',' << r.adv_acc << '\n';
        }
    };
    // Scored at each operating point and at the strongest swept budget.
    auto scored = attacks;
    for (const auto& op : attacks) {
        const auto& eps = op.kind == AttackKind::fgsm ? cfg.attacks.fgsm_epsilons : cfg.attacks.bim_epsilons;
        if (eps.back() == op.epsilon) continue;
        auto strongest = op;
        strongest.epsilon = eps.back();
        if (op.kind == AttackKind::bim) strongest.alpha = cfg.attacks.bim_alpha_fraction * eps.back();
        scored.push_back(strongest);
    }
    report_rows("initial", evaluate_robustness(initial, test, scored));

    for (const auto& [suffix, run_attacks] : runs) {
        rc.attacks = run_attacks;
        say(log, "retraining against " + std::to_string(run_attacks.size()) + " attack(s)");
        const auto state = adversarial_retrain(initial, train, val, rc);
        say(log, "stopped after " + std::to_string(state.iteration) + " iterations");

        const auto ckpt = out_path(cfg, "robust" + suffix + ".ckpt");
        save_checkpoint(ckpt, state.model);
        ordered_json tag;
        tag["source_model"] = "model.ckpt";
        tag["attacks"] = ordered_json::array();
        for (const auto& a : run_attacks) tag["attacks"].push_back(attack_json(a));
        tag["batch_n"] = rc.batch_n;
        tag["max_iterations"] = rc.max_iterations;
        tag["stop_window"] = rc.stop_window;
        tag["stop_threshold"] = rc.stop_threshold;
        tag["seed"] = rc.seed;
        tag["iterations_run"] = state.iteration;
        tag["stopped_early"] = state.stopped_early;
        tag["repository_size"] = state.repository.size();
        const auto tag_path = out_path(cfg, "robust" + suffix + ".json");
        {
            auto t = open_text(tag_path);
            t << tag.dump(2) << '\n';
        }
        const auto history_path = out_path(cfg, "retrain_history" + suffix + ".csv");
        {
            auto h = open_text(history_path);
            write_retrain_csv(h, state.history);
        }
        report_rows("robust" + suffix, evaluate_robustness(state.model, test, scored));
        result.artifacts.insert(result.artifacts.end(), {ckpt, tag_path, history_path});
    }
    result.artifacts.push_back(robustness_path);
    write_manifest(cfg, "defend", result, seconds_since(started));
    return result;
}

CommandResult run_eval(const RunConfig& cfg, const Logger& log) {
    const auto started = std::chrono::steady_clock::now();
    validate_run_config(cfg);
    const auto model_path = out_path(cfg, "model.ckpt");
    const auto model = load_model(model_path, "train");
    const auto data = load_splits(cfg);
    prepare_output(cfg);
    CommandResult result;
    const auto catalog = catalog_for(cfg.traffic);
    const FeatureScaler scaler(catalog, data.names);
    const auto train = scaler.normalize(data.train);
    const auto val = scaler.normalize(data.val);
    const auto test = scaler.normalize(data.test);

    const auto metrics_path = out_path(cfg, "eval_metrics.csv");
    {
        auto m = open_text(metrics_path);
        write_metrics_header(m);
        write_metrics_row(m, "model", "test", compute_metrics(model, test));
        for (const char* name : {"robust", "robust_fgsm", "robust_bim"}) {
            const auto path = out_path(cfg, std::string(name) + ".ckpt");
            if (fs::exists(path)) write_metrics_row(m, name, "test", compute_metrics(load_checkpoint(path), test));
        }
    }
    result.artifacts.push_back(metrics_path);

    if (cfg.eval.optimizer_comparison) {
        std::vector<OptimizerSettings> optimizers;
        for (const auto& name : cfg.eval.optimizers) {
            // The shared learning rate applies only to the configured training optimizer.
            optimizers.push_back(optimizer_settings(name, name == cfg.training.optimizer ? cfg.training.learning_rate : 0.0));
        }
        ComparisonConfig cc;
        cc.model = model.config;
        cc.model.init_seed = cfg.seeds.init;
        cc.fit.epochs = cfg.training.epochs;
        cc.fit.batch_size = cfg.training.batch_size;
        cc.fit.shuffle_seed = cfg.seeds.shuffle;
        say(log, "optimizer comparison over " + std::to_string(optimizers.size()) + " optimizers");
        const auto rows = optimizer_comparison(train, val, test, optimizers, cc);
        const auto table_path = out_path(cfg, "table.csv");
        {
            auto t = open_text(table_path);
            write_table_csv(t, rows);
        }
        result.artifacts.push_back(table_path);
        for (const auto& r : rows) {
            say(log, to_string(r.optimizer) + ": test accuracy " + std::to_string(r.metrics.accuracy));
            if (r.history.empty()) continue;
            for (auto& p : emit_curves(r.history, out_path(cfg, "curves_" + to_string(r.optimizer)))) {
                result.artifacts.push_back(std::move(p));
            }
        }
    }
    write_manifest(cfg, "eval", result, seconds_since(started));
    return result;
}

}  // namespace canadv
