#include "canadv/defense.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "canadv/error.hpp"
#include "canadv/random.hpp"

namespace canadv {

namespace {

// N distinct indices from [0, n): partial Fisher-Yates.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.index(n - i)]);
    pool.resize(count);
    return pool;
}

void check_shapes(const DetectorModel& model, const std::vector<SampleWindow>& windows, const char* what) {
    for (const auto& w : windows) {
        if (w.x.rows() != model.config.seq_len || w.x.cols() != model.config.input_dim) {
            throw ContractError(std::string(what) + " windows do not match the model input shape");
        }
    }
}

}  // namespace

void RetrainConfig::validate() const {
    std::vector<std::string> problems;
    if (batch_n < 1) problems.emplace_back("defense.batch_n must be >= 1");
    if (max_iterations < 1) problems.emplace_back("defense.max_iterations must be >= 1");
    if (stop_window < 1) problems.emplace_back("defense.stop_window must be >= 1");
    if (!(stop_threshold > 0.0 && stop_threshold <= 1.0)) problems.emplace_back("defense.stop_threshold must be in (0,1]");
    if (minibatch_size < 1) problems.emplace_back("defense.minibatch_size must be >= 1");
    if (attacks.empty()) problems.emplace_back("defense needs at least one attack");
    for (const auto& a : attacks) {
        try {
            a.validate();
        } catch (const ConfigError& e) {
            for (const auto& p : e.problems()) problems.push_back(p);
        }
    }
    if (!problems.empty()) throw ConfigError(problems);
}

RetrainState adversarial_retrain(const DetectorModel& initial, const std::vector<SampleWindow>& train,
                                 const std::vector<SampleWindow>& val, const RetrainConfig& cfg,
                                 std::optional<Optimizer> optimizer) {
    cfg.validate();
    if (train.empty()) throw ContractError("adversarial retraining needs training data");
    if (val.empty()) throw ContractError("adversarial retraining needs validation data");
    const auto n = static_cast<std::size_t>(cfg.batch_n);
    if (n > train.size()) {
        throw ContractError("batch_n " + std::to_string(n) + " exceeds the " + std::to_string(train.size()) +
                            " training windows");
    }
    check_shapes(initial, train, "training");
    check_shapes(initial, val, "validation");
    if (optimizer && optimizer->first_moment().size() != static_cast<Eigen::Index>(initial.parameter_count())) {
        throw ContractError("optimizer state does not match the model");
    }

    RetrainState state;
    state.model = initial;
    Optimizer opt = optimizer ? std::move(*optimizer) : Optimizer(cfg.optimizer, initial.parameter_count());
    Rng rng(cfg.seed);
    int streak = 0;

    for (int i = 1; i <= cfg.max_iterations; ++i) {
        const auto& attack = cfg.attacks[static_cast<std::size_t>(i - 1) % cfg.attacks.size()];

        // S_i and its adversarial counterpart S'_i against M_{i-1}.
        const auto picked = draw_without_replacement(train.size(), n, rng);
        std::vector<SampleWindow> batch;
        batch.reserve(2 * n);
        for (auto k : picked) batch.push_back(train[k]);
        auto adversarial = perturb_windows(state.model, batch, attack);
        for (auto& w : adversarial) state.repository.push_back(std::move(w));

        // S_i^adv from the repository.
        for (auto k : draw_without_replacement(state.repository.size(), n, rng)) {
            batch.push_back(state.repository[k]);
        }

        std::vector<std::size_t> order(batch.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span<std::size_t>(order));
        const auto pass = train_epoch(state.model, opt, batch, order, cfg.minibatch_size);

        RetrainRecord rec;
        rec.iteration = i;
        rec.train_acc = pass.accuracy;
        rec.val_clean_acc = evaluate(state.model, val).accuracy;
        rec.val_adv_acc = attack_success_rate(state.model, val, attack).post_attack_accuracy;
        rec.attack_kind = attack.kind;
        rec.clean_in_batch = n;
        rec.adversarial_in_batch = batch.size() - n;
        rec.repository_size = state.repository.size();
        state.history.push_back(rec);
        state.iteration = i;

        streak = rec.val_adv_acc >= cfg.stop_threshold ? streak + 1 : 0;
        if (streak >= cfg.stop_window) {
            state.stopped_early = i < cfg.max_iterations;
            break;
        }
    }
    return state;
}

std::optional<int> stabilization_iteration(const std::vector<RetrainRecord>& history, double band) {
    if (history.empty()) return std::nullopt;
    const double final_value = history.back().val_adv_acc;
    int first = history.back().iteration;
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
        if (std::abs(it->val_adv_acc - final_value) > band) break;
        first = it->iteration;
    }
    return first;
}

RobustnessReport evaluate_robustness(const DetectorModel& model, const std::vector<SampleWindow>& test,
                                     const std::vector<AttackConfig>& attacks) {
    if (test.empty()) throw ContractError("robustness evaluation needs a non-empty test set");
    RobustnessReport report;
    report.clean_acc = evaluate(model, test).accuracy;
    for (const auto& a : attacks) {
        const auto ev = attack_success_rate(model, test, a);
        report.rows.push_back(RobustnessRow{a, ev.clean_accuracy, ev.post_attack_accuracy});
    }
    return report;
}

void write_retrain_csv(std::ostream& out, const std::vector<RetrainRecord>& history) {
    out << "iteration,train_acc,val_clean_acc,val_adv_acc,attack_kind\n" << std::setprecision(17);
    for (const auto& r : history) {
        out << r.iteration << ',' << r.train_acc << ',' << r.val_clean_acc << ',' << r.val_adv_acc << ','
            << to_string(r.attack_kind) << '\n';
    }
}

void write_robustness_csv(std::ostream& out, const RobustnessReport& report) {
    out << "attack,epsilon,alpha,iterations,clean_acc,adv_acc\n" << std::setprecision(17);
    out << "none,0,0,0," << report.clean_acc << ',' << report.clean_acc << '\n';
    for (const auto& r : report.rows) {
        const bool iterative = r.attack.kind == AttackKind::bim;
        out << to_string(r.attack.kind) << ',' << r.attack.epsilon << ',' << (iterative ? r.attack.alpha : 0.0) << ','
            << (iterative ? r.attack.iterations : 1) << ',' << r.clean_acc << ',' << r.adv_acc << '\n';
    }
}

}  // namespace canadv
