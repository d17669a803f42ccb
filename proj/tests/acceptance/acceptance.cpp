// End-to-end acceptance run. Fast structural checks run in process; the
// statistical ones drive the canadv CLI over the full synthetic dataset and
// read back the artifacts it writes. One PASS/FAIL line per criterion.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "canadv/attacks.hpp"
#include "canadv/can_codec.hpp"
#include "canadv/defense.hpp"
#include "canadv/error.hpp"
#include "canadv/nnet.hpp"
#include "canadv/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace canadv;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// CSV and artifact helpers

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw std::runtime_error("no column " + name);
    }
    std::string get(std::size_t row, const std::string& name) const { return rows[row][column(name)]; }
    double num(std::size_t row, const std::string& name) const { return std::stod(get(row, name)); }
};

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    return out;
}

Csv read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing " + path.string());
    Csv csv;
    std::string line;
    std::getline(in, line);
    csv.header = split_commas(line);
    while (std::getline(in, line)) {
        if (!line.empty()) csv.rows.push_back(split_commas(line));
    }
    return csv;
}

// The CSV with its wall-time columns removed, for byte comparison.
std::string without_timing(const fs::path& path) {
    const auto csv = read_csv(path);
    std::vector<bool> keep;
    for (const auto& h : csv.header) keep.push_back(h != "time_s" && h != "wall_time_s");
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& cells) {
        bool first = true;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (!keep[i]) continue;
            os << (first ? "" : ",") << cells[i];
            first = false;
        }
        os << '\n';
    };
    emit(csv.header);
    for (const auto& r : csv.rows) emit(r);
    return os.str();
}

double manifest_seconds(const fs::path& dir, const std::string& command) {
    std::ifstream in(dir / ("manifest_" + command + ".json"));
    return nlohmann::json::parse(in).at("wall_time_s").get<double>();
}

// ---------------------------------------------------------------------------
// CLI driver

class Pipeline {
public:
    Pipeline(fs::path workdir, std::string name) : dir_(workdir / name), log_(workdir / (name + ".log")) {
        fs::create_directories(dir_);
        config_ = dir_ / "config_in.json";
        std::ofstream(config_) << nlohmann::json{
            {"output_dir", dir_.string()},
            {"seeds", {{"trace", 1}, {"fdia", 2}, {"split", 3}, {"init", 4}, {"shuffle", 5}, {"retrain", 6}}},
            {"training", {{"optimizer", "adam"}, {"epochs", 50}}},
            {"defense", {{"batch_n", 200}, {"max_iterations", 100}}},
        }.dump(2);
    }

    const fs::path& dir() const { return dir_; }

    bool run(const std::string& command) {
        const std::string cmd = std::string(CANADV_CLI_PATH) + " " + command + " --config " + config_.string() +
                                " >>" + log_.string() + " 2>&1";
        std::cout << "  running canadv " << command << " (" << dir_.filename().string() << ")" << std::endl;
        const int raw = std::system(cmd.c_str());
        const bool ok = WIFEXITED(raw) && WEXITSTATUS(raw) == 0;
        if (!ok) std::cout << "  canadv " << command << " failed, see " << log_.string() << std::endl;
        ran_[command] = ok;
        return ok;
    }

    bool ran(const std::string& command) const {
        const auto it = ran_.find(command);
        return it != ran_.end() && it->second;
    }

private:
    fs::path dir_;
    fs::path log_;
    fs::path config_;
    std::map<std::string, bool> ran_;
};

// ---------------------------------------------------------------------------
// In-process criteria

Outcome parameter_count_check() {
    ModelConfig cfg;
    cfg.input_dim = 20;
    cfg.hidden_dim = 128;
    const auto model = init_model(cfg);
    const bool pass = model.parameter_count() == 76417 && parameter_count(20, 128) == 76417;
    return {pass, std::to_string(model.parameter_count()) + " parameters"};
}

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

Outcome gradient_check() {
    constexpr double h = 1e-5;
    constexpr int instances = 20;
    double worst_param = 0.0, worst_input = 0.0;
    Rng rng(2024);
    for (int k = 0; k < instances; ++k) {
        ModelConfig cfg;
        cfg.input_dim = 3 + k % 3;
        cfg.hidden_dim = 2 + k % 4;
        cfg.seq_len = 4 + k % 5;
        cfg.init_seed = static_cast<std::uint64_t>(100 + k);
        auto model = init_model(cfg);
        Eigen::MatrixXd x(cfg.seq_len, cfg.input_dim);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(0.0, 1.0);
        const Label y = k % 2 ? Label::Attack : Label::Normal;
        auto loss = [&](const DetectorModel& m, const Eigen::MatrixXd& in) {
            return bce_loss(forward(m, in).probability, y);
        };
        const auto fwd = forward(model, x);
        const auto grads = backward(model, fwd.cache, x, y);

        auto& flat = model.params.flat();
        for (Eigen::Index i = 0; i < flat.size(); ++i) {
            const double saved = flat(i);
            flat(i) = saved + h;
            const double up = loss(model, x);
            flat(i) = saved - h;
            const double down = loss(model, x);
            flat(i) = saved;
            worst_param = std::max(worst_param, relative_error(grads.param_grads.flat()(i), (up - down) / (2 * h)));
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            Eigen::MatrixXd shifted = x;
            shifted.data()[i] = x.data()[i] + h;
            const double up = loss(model, shifted);
            shifted.data()[i] = x.data()[i] - h;
            const double down = loss(model, shifted);
            worst_input = std::max(worst_input, relative_error(grads.input_grad.data()[i], (up - down) / (2 * h)));
        }
    }
    const bool pass = worst_param < 1e-4 && worst_input < 1e-4;
    return {pass, std::to_string(instances) + " instances, max rel err params " + fmt(worst_param, 3) + ", inputs " +
                      fmt(worst_input, 3) + " (< 1e-4)"};
}

// Normalized windows from the synthetic dataset, without touching the run directory.
std::vector<SampleWindow> sample_windows(std::size_t count) {
    RunConfig cfg;
    cfg.traffic.duration_s = 200.0;
    const auto catalog = catalog_for(cfg.traffic);
    const auto split = build_dataset(cfg, catalog);
    const FeatureScaler scaler(catalog, catalog.signal_names());
    auto windows = scaler.normalize(split.train);
    windows.resize(std::min(count, windows.size()));
    return windows;
}

DetectorModel full_size_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.init_seed = seed;
    return init_model(cfg);
}

Outcome degenerate_bim_check() {
    const auto model = full_size_model(11);
    const auto windows = sample_windows(100);
    std::size_t identical = 0;
    for (const auto& w : windows) {
        AttackConfig f;
        f.epsilon = 0.05;
        AttackConfig b = f;
        b.kind = AttackKind::bim;
        b.iterations = 1;
        b.alpha = f.epsilon;
        const auto a = fgsm(model, w.x, w.label, f).adversarial;
        const auto c = bim(model, w.x, w.label, b).adversarial;
        identical += a.rows() == c.rows() && a.cols() == c.cols() &&
                     std::memcmp(a.data(), c.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
    }
    return {identical == windows.size() && windows.size() == 100,
            std::to_string(identical) + "/" + std::to_string(windows.size()) + " windows bit-identical"};
}

Outcome invariants_check(const Pipeline& run) {
    // Adversarial outputs stay inside the eps-ball.
    const auto model = full_size_model(12);
    const auto windows = sample_windows(100);
    std::size_t checked = 0, violations = 0;
    for (double eps : {0.01, 0.05, 0.2}) {
        for (const auto kind : {AttackKind::fgsm, AttackKind::bim}) {
            AttackConfig cfg;
            cfg.kind = kind;
            cfg.epsilon = eps;
            cfg.alpha = eps / 4;
            cfg.iterations = 6;
            const auto adv = perturb_windows(model, windows, cfg);
            for (std::size_t i = 0; i < adv.size(); ++i) {
                ++checked;
                violations += (adv[i].x - windows[i].x).cwiseAbs().maxCoeff() > eps + 1e-12;
            }
        }
    }
    // The attacked test sets written by the pipeline, against the clean test split.
    if (run.ran("attack")) {
        const auto catalog = default_catalog();
        const auto clean = load_windows((run.dir() / "test.bin").string());
        const FeatureScaler scaler(catalog, clean.names);
        const auto test = scaler.normalize(clean.windows);
        for (const auto* kind : {"fgsm", "bim"}) {
            const auto adv = load_windows((run.dir() / (std::string("adv_test_") + kind + ".bin")).string());
            std::ifstream side(run.dir() / (std::string("adv_test_") + kind + ".json"));
            const double eps = nlohmann::json::parse(side).at("epsilon").get<double>();
            for (std::size_t i = 0; i < adv.windows.size(); ++i) {
                ++checked;
                violations += (adv.windows[i].x - test[i].x).cwiseAbs().maxCoeff() > eps + 1e-12;
            }
        }
    }

    // Every FDIA output of the full dataset lies inside the physical range.
    RunConfig cfg;
    const auto catalog = catalog_for(cfg.traffic);
    const auto split = build_dataset(cfg, catalog);
    const auto& names = catalog.signal_names();
    std::size_t attacked = 0, out_of_range = 0;
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
        for (const auto& w : *part) {
            if (w.label != Label::Attack) continue;
            ++attacked;
            for (std::size_t s = 0; s < names.size(); ++s) {
                const auto& def = catalog.signal(names[s]);
                const auto col = w.x.col(static_cast<Eigen::Index>(s));
                out_of_range += col.minCoeff() < def.min_phys || col.maxCoeff() > def.max_phys;
            }
        }
    }
    const bool pass = violations == 0 && out_of_range == 0 && attacked > 0;
    return {pass, std::to_string(checked - violations) + "/" + std::to_string(checked) + " adversarial windows in ball, " +
                      std::to_string(attacked) + " FDIA windows with " + std::to_string(out_of_range) +
                      " out-of-range columns"};
}

Outcome repository_check() {
    const auto windows = sample_windows(120);
    std::vector<SampleWindow> train(windows.begin(), windows.begin() + 100);
    std::vector<SampleWindow> val(windows.begin() + 100, windows.end());
    RetrainConfig cfg;
    cfg.batch_n = 10;
    cfg.max_iterations = 20;
    cfg.stop_window = 21;
    cfg.seed = 9;
    AttackConfig f;
    f.epsilon = 0.05;
    AttackConfig b = f;
    b.kind = AttackKind::bim;
    b.alpha = 0.01;
    cfg.attacks = {f, b};
    ModelConfig mc;
    mc.init_seed = 13;
    const auto state = adversarial_retrain(init_model(mc), train, val, cfg);
    bool ok = state.iteration == 20 && state.repository.size() == 200 && state.history.size() == 20;
    for (const auto& r : state.history) {
        ok = ok && r.repository_size == static_cast<std::size_t>(r.iteration) * 10 && r.clean_in_batch == 10 &&
             r.adversarial_in_batch == 10;
    }
    return {ok, "iterations " + std::to_string(state.iteration) + ", repository " +
                    std::to_string(state.repository.size()) + " (expected 200), every batch 10 clean + 10 adversarial"};
}

int payload_bit(const Payload& p, int pos) { return (p[static_cast<std::size_t>(pos / 8)] >> (pos % 8)) & 1; }

std::int64_t oracle_extract(const Payload& p, const SignalDef& s) {
    std::uint64_t raw = 0;
    if (s.byte_order == ByteOrder::little_endian) {
        for (int k = s.bit_length - 1; k >= 0; --k) raw = (raw << 1) | static_cast<std::uint64_t>(payload_bit(p, s.start_bit + k));
    } else {
        int pos = s.start_bit;
        for (int k = 0; k < s.bit_length; ++k) {
            raw = (raw << 1) | static_cast<std::uint64_t>(payload_bit(p, pos));
            pos = pos % 8 == 0 ? pos + 15 : pos - 1;
        }
    }
    if (s.is_signed && s.bit_length < 64 && (raw >> (s.bit_length - 1)) & 1) raw |= ~std::uint64_t{0} << s.bit_length;
    return static_cast<std::int64_t>(raw);
}

bool motorola_fits(int start, int length) {
    int pos = start;
    for (int k = 0; k < length; ++k) {
        if (pos < 0 || pos > 63) return false;
        pos = pos % 8 == 0 ? pos + 15 : pos - 1;
    }
    return true;
}

Outcome codec_check() {
    Rng rng(10);
    const auto& catalog = default_catalog();
    std::vector<const MessageDef*> messages;
    for (const auto& [id, m] : catalog.messages()) messages.push_back(&m);
    std::size_t round_trips = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto& msg = *messages[rng.index(messages.size())];
        std::map<std::string, double> values;
        for (const auto& s : msg.signals) {
            const auto span = static_cast<std::uint64_t>(s.raw_max() - s.raw_min());
            values[s.name] = s.to_physical(s.raw_min() + static_cast<std::int64_t>(rng.next() % (span + 1)));
        }
        const CanFrame frame{msg.message_id, 0.0, static_cast<std::uint8_t>(msg.dlc), encode_signals(values, msg)};
        round_trips += decode_frame(frame, catalog) == values;
    }
    std::size_t extractions = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        SignalDef s;
        s.name = "S";
        for (;;) {
            s.byte_order = rng.index(2) ? ByteOrder::big_endian : ByteOrder::little_endian;
            s.bit_length = 1 + static_cast<int>(rng.index(64));
            s.start_bit = static_cast<int>(rng.index(64));
            s.is_signed = s.bit_length == 64 || rng.index(2) == 0;
            if (s.byte_order == ByteOrder::little_endian ? s.start_bit + s.bit_length <= 64
                                                          : motorola_fits(s.start_bit, s.bit_length)) {
                break;
            }
        }
        Payload p{};
        for (auto& byte : p) byte = static_cast<std::uint8_t>(rng.index(256));
        extractions += extract_raw(p, s) == oracle_extract(p, s);
    }
    return {round_trips == 1000 && extractions == 1000,
            std::to_string(round_trips) + "/1000 maps round-trip, " + std::to_string(extractions) +
                "/1000 layouts match the bit oracle"};
}

// ---------------------------------------------------------------------------
// Pipeline criteria

Outcome training_check(const Pipeline& run) {
    if (!run.ran("train")) return {false, "train did not complete"};
    const auto metrics = read_csv(run.dir() / "train_metrics.csv");
    double acc = -1.0;
    for (std::size_t r = 0; r < metrics.rows.size(); ++r) {
        if (metrics.get(r, "split") == "test") acc = metrics.num(r, "accuracy");
    }
    const double seconds = manifest_seconds(run.dir(), "train");
    return {acc >= 0.95 && seconds <= 600.0,
            "Adam test accuracy " + fmt(acc) + " (>= 0.95), train " + fmt(seconds, 3) + " s (<= 600)"};
}

Outcome ordering_check(const Pipeline& run) {
    if (!run.ran("eval")) return {false, "eval did not complete"};
    const auto table = read_csv(run.dir() / "table.csv");
    std::map<std::string, double> acc;
    for (std::size_t r = 0; r < table.rows.size(); ++r) acc[table.get(r, "optimizer")] = table.num(r, "accuracy");
    for (const auto* name : {"adam", "rmsprop", "adagrad", "sgd"}) {
        if (!acc.contains(name)) return {false, std::string("table.csv has no ") + name + " row"};
    }
    const bool ordered = std::min(acc["adam"], acc["rmsprop"]) > std::max(acc["adagrad"], acc["sgd"]);
    const double seconds = manifest_seconds(run.dir(), "eval");
    return {ordered && seconds <= 2400.0, "adam " + fmt(acc["adam"]) + ", rmsprop " + fmt(acc["rmsprop"]) +
                                              ", adagrad " + fmt(acc["adagrad"]) + ", sgd " + fmt(acc["sgd"]) +
                                              ", comparison " + fmt(seconds, 3) + " s (<= 2400)"};
}

Outcome attack_check(const Pipeline& run) {
    if (!run.ran("attack")) return {false, "attack did not complete"};
    const auto sweep = read_csv(run.dir() / "sweep.csv");
    std::map<std::string, double> best;
    bool complementary = true;
    for (std::size_t r = 0; r < sweep.rows.size(); ++r) {
        const double s = sweep.num(r, "success_rate");
        const double a = sweep.num(r, "post_attack_accuracy");
        complementary = complementary && s + a == 1.0;
        auto& b = best[sweep.get(r, "kind")];
        b = std::max(b, s);
    }
    const auto summary = read_csv(run.dir() / "attack_summary.csv");
    for (std::size_t r = 0; r < summary.rows.size(); ++r) {
        complementary = complementary && summary.num(r, "success_rate") + summary.num(r, "accuracy") == 1.0;
    }
    const double seconds = manifest_seconds(run.dir(), "attack");
    const bool pass = best["fgsm"] >= 0.9 && best["bim"] >= 0.9 && complementary && seconds <= 300.0;
    return {pass, "best success fgsm " + fmt(best["fgsm"]) + ", bim " + fmt(best["bim"]) +
                      " (>= 0.90), success + accuracy == 1 on every row: " + (complementary ? "yes" : "no") +
                      ", sweep " + fmt(seconds, 3) + " s (<= 300)"};
}

Outcome defense_check(const Pipeline& run) {
    if (!run.ran("defend")) return {false, "defend did not complete"};
    const auto report = read_csv(run.dir() / "robustness.csv");
    std::map<std::string, double> strongest;
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        auto& e = strongest[report.get(r, "attack")];
        e = std::max(e, report.num(r, "epsilon"));
    }
    std::map<std::string, std::pair<double, double>> robust;  // attack -> clean, adversarial
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        const auto attack = report.get(r, "attack");
        if (report.get(r, "model") == "robust" && report.num(r, "epsilon") == strongest[attack]) {
            robust[attack] = {report.num(r, "clean_acc"), report.num(r, "adv_acc")};
        }
    }
    if (!robust.contains("fgsm") || !robust.contains("bim")) return {false, "robustness.csv lacks robust rows"};
    const double seconds = manifest_seconds(run.dir(), "defend");
    bool pass = seconds <= 1800.0;
    std::string detail;
    for (const auto* kind : {"fgsm", "bim"}) {
        const auto [clean, adv] = robust[kind];
        pass = pass && clean >= 0.95 && adv >= 0.95;
        detail += std::string(kind) + " eps " + fmt(strongest[kind]) + ": clean " + fmt(clean) + ", adversarial " +
                  fmt(adv) + "; ";
    }
    return {pass, detail + "retraining " + fmt(seconds, 3) + " s (<= 1800)"};
}

Outcome determinism_check(const Pipeline& a, const Pipeline& b) {
    for (const auto* cmd : {"train", "attack", "defend"}) {
        if (!a.ran(cmd) || !b.ran(cmd)) return {false, std::string(cmd) + " did not complete in both runs"};
    }
    const char* files[] = {"train_metrics.csv",   "history.csv", "sweep.csv", "attack_summary.csv",
                           "retrain_history.csv", "robustness.csv"};
    std::size_t same = 0;
    std::string differing;
    for (const auto* f : files) {
        if (without_timing(a.dir() / f) == without_timing(b.dir() / f)) {
            ++same;
        } else {
            differing += std::string(" ") + f;
        }
    }
    return {same == std::size(files), std::to_string(same) + "/" + std::to_string(std::size(files)) +
                                          " metric CSVs byte-identical" + (differing.empty() ? "" : ", differ:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"canadv acceptance run"};
    std::string workdir = "acceptance_run";
    app.add_option("--workdir", workdir, "Directory for pipeline artifacts (recreated)");
    CLI11_PARSE(app, argc, argv);

    const fs::path root(workdir);
    fs::remove_all(root);
    fs::create_directories(root);

    std::map<int, std::pair<std::string, Outcome>> results;
    auto record = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
        const auto started = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        std::cout << "  [" << id << "] " << name << " checked in " << fmt(secs, 3) << " s" << std::endl;
        results[id] = {name, o};
    };

    record(1, "parameter count", parameter_count_check);
    record(2, "gradient fidelity", gradient_check);
    record(6, "degenerate BIM equals FGSM", degenerate_bim_check);
    record(9, "repository bookkeeping", repository_check);
    record(10, "codec round trip", codec_check);

    Pipeline main_run(root, "run_a");
    for (const auto* cmd : {"gen", "train", "attack", "defend", "eval"}) {
        if (!main_run.run(cmd)) break;
    }
    record(3, "detector training", [&] { return training_check(main_run); });
    record(4, "optimizer ordering", [&] { return ordering_check(main_run); });
    record(5, "attack efficacy", [&] { return attack_check(main_run); });
    record(7, "eps-ball and range invariants", [&] { return invariants_check(main_run); });
    record(8, "adversarial retraining defense", [&] { return defense_check(main_run); });

    Pipeline rerun(root, "run_b");
    for (const auto* cmd : {"gen", "train", "attack", "defend"}) {
        if (!rerun.run(cmd)) break;
    }
    record(11, "determinism", [&] { return determinism_check(main_run, rerun); });

    std::size_t passed = 0;
    std::cout << '\n';
    for (const auto& [id, entry] : results) {
        const auto& [name, o] = entry;
        passed += o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << '\n';
    }
    std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
    return passed == results.size() ? 0 : 1;
}
