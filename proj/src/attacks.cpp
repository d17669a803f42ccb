#include "canadv/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "canadv/error.hpp"

namespace canadv {

namespace {

constexpr std::size_t kAttackBatch = 64;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct Prepared {
    SequenceBatch clean;
    SequenceBatch mask;  // 1 where perturbation is allowed
    std::vector<double> labels;
};

// Domain clamp first, then the epsilon ball around the clean input, so the ball
// holds even when a clean entry already sits outside the domain.
void finalize(SequenceBatch& adv, const SequenceBatch& clean, const AttackConfig& cfg) {
    auto a = adv.data().array();
    const auto x = clean.data().array();
    if (cfg.clamp_to_domain) a = a.max(cfg.domain_min).min(cfg.domain_max);
    a = a.max(x - cfg.epsilon).min(x + cfg.epsilon);
}

SequenceBatch input_gradient(const DetectorModel& model, const SequenceBatch& at, const std::vector<double>& labels,
                             Eigen::VectorXd* probabilities = nullptr) {
    const auto cache = forward_batch(model, at);
    if (probabilities != nullptr) *probabilities = cache.probabilities;
    return backward_batch(model, cache, at, labels, GradientRequest{false, true}).inputs;
}

SequenceBatch signed_step(const SequenceBatch& grad, const SequenceBatch& mask, double step) {
    SequenceBatch out = grad;
    out.data() = grad.data().unaryExpr(&sign_of).cwiseProduct(mask.data()) * step;
    return out;
}

// Core of both attacks on a packed batch. Returns the adversarial batch.
SequenceBatch attack_batch(const DetectorModel& model, const Prepared& in, const AttackConfig& cfg,
                           Eigen::VectorXd* clean_probabilities) {
    if (cfg.kind == AttackKind::fgsm) {
        const auto grad = input_gradient(model, in.clean, in.labels, clean_probabilities);
        SequenceBatch adv = in.clean;
        adv.data() += signed_step(grad, in.mask, cfg.epsilon).data();
        finalize(adv, in.clean, cfg);
        return adv;
    }

    SequenceBatch adv = in.clean;
    SequenceBatch frozen;
    for (int k = 0; k < cfg.iterations; ++k) {
        SequenceBatch grad;
        if (cfg.frozen_gradient) {
            if (k == 0) frozen = input_gradient(model, in.clean, in.labels, clean_probabilities);
            grad = frozen;
        } else {
            grad = input_gradient(model, adv, in.labels, k == 0 ? clean_probabilities : nullptr);
        }
        adv.data() += signed_step(grad, in.mask, cfg.alpha).data();
        auto a = adv.data().array();
        const auto x = in.clean.data().array();
        a = a.max(x - cfg.epsilon).min(x + cfg.epsilon);
    }
    finalize(adv, in.clean, cfg);
    return adv;
}

Prepared prepare(const std::vector<SampleWindow>& windows, std::span<const std::size_t> idx, const AttackConfig& cfg) {
    Prepared p;
    p.clean = SequenceBatch::pack(windows, idx);
    p.mask = SequenceBatch(p.clean.steps(), p.clean.batch(), p.clean.features());
    p.mask.data().setOnes();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& w = windows[idx[b]];
        p.labels.push_back(label_value(w.label));
        if (!cfg.span_mask) continue;
        for (Eigen::Index t = 0; t < p.clean.steps(); ++t) {
            const bool inside = w.attack_length > 0 && t >= w.attack_begin && t < w.attack_begin + w.attack_length;
            if (!inside) p.mask.data().col(t * p.clean.batch() + static_cast<Eigen::Index>(b)).setZero();
        }
    }
    return p;
}

AttackOutcome single(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg) {
    cfg.validate();
    std::vector<SampleWindow> one(1);
    one[0].x = x;
    one[0].label = y_label;
    const std::size_t idx = 0;
    const auto prepared = prepare(one, std::span<const std::size_t>(&idx, 1), cfg);
    Eigen::VectorXd clean_p;
    const auto adv = attack_batch(model, prepared, cfg, &clean_p);

    AttackOutcome out;
    out.adversarial = adv.sample(0);
    out.original_prediction = classify(clean_p(0), model.config.threshold);
    out.adversarial_prediction = predict(model, out.adversarial);
    out.flipped = out.original_prediction != out.adversarial_prediction;
    const Eigen::MatrixXd diff = out.adversarial - x;
    out.l_inf_distance = diff.cwiseAbs().maxCoeff();
    out.l2_distance = diff.norm();
    return out;
}

}  // namespace

std::string to_string(AttackKind kind) { return kind == AttackKind::fgsm ? "fgsm" : "bim"; }

AttackKind attack_from_string(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "fgsm") return AttackKind::fgsm;
    if (lower == "bim") return AttackKind::bim;
    throw ConfigError("unknown attack '" + name + "' (expected fgsm or bim)");
}

void AttackConfig::validate() const {
    std::vector<std::string> problems;
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) problems.emplace_back("attack epsilon must be >= 0");
    if (kind == AttackKind::bim) {
        if (iterations < 1) problems.emplace_back("BIM iterations must be >= 1");
        if (!(alpha > 0.0) && epsilon > 0.0) problems.emplace_back("BIM alpha must be > 0");
        if (alpha > epsilon) problems.emplace_back("BIM alpha must not exceed epsilon");
    }
    if (clamp_to_domain && !(domain_min <= domain_max)) problems.emplace_back("attack domain is empty");
    if (!problems.empty()) throw ConfigError(problems);
}

std::string AttackConfig::describe() const {
    std::ostringstream os;
    os << to_string(kind) << "(eps=" << epsilon;
    if (kind == AttackKind::bim) os << ", alpha=" << alpha << ", iterations=" << iterations;
    os << ")";
    return os.str();
}

AttackOutcome fgsm(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg) {
    if (cfg.kind != AttackKind::fgsm) throw ContractError("fgsm called with a non-FGSM config");
    return single(model, x, y_label, cfg);
}

AttackOutcome bim(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg) {
    if (cfg.kind != AttackKind::bim) throw ContractError("bim called with a non-BIM config");
    return single(model, x, y_label, cfg);
}

AttackOutcome run_attack(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg) {
    return single(model, x, y_label, cfg);
}

std::vector<SampleWindow> perturb_windows(const DetectorModel& model, const std::vector<SampleWindow>& windows,
                                          const AttackConfig& cfg) {
    cfg.validate();
    std::vector<SampleWindow> out = windows;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += kAttackBatch) {
        const auto end = std::min(windows.size(), start + kAttackBatch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto prepared = prepare(windows, idx, cfg);
        const auto adv = attack_batch(model, prepared, cfg, nullptr);
        for (std::size_t b = 0; b < idx.size(); ++b) out[idx[b]].x = adv.sample(static_cast<Eigen::Index>(b));
    }
    return out;
}

AttackEvaluation attack_success_rate(const DetectorModel& model, const std::vector<SampleWindow>& test,
                                     const AttackConfig& cfg) {
    if (test.empty()) throw ContractError("attack evaluation needs a non-empty test set");
    const auto started = std::chrono::steady_clock::now();
    const auto adversarial = perturb_windows(model, test, cfg);
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const auto clean = predict_batch(model, test);
    const auto attacked = predict_batch(model, adversarial);

    AttackEvaluation ev;
    ev.samples = test.size();
    ev.wall_time_s = elapsed;
    std::size_t correct = 0, clean_correct = 0;
    std::size_t n_attack = 0, n_normal = 0, ok_attack = 0, ok_normal = 0;
    double l2_sum = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const bool ok = attacked[i] == test[i].label;
        correct += ok ? 1 : 0;
        clean_correct += clean[i] == test[i].label ? 1 : 0;
        if (test[i].label == Label::Attack) {
            ++n_attack;
            ok_attack += ok ? 1 : 0;
        } else {
            ++n_normal;
            ok_normal += ok ? 1 : 0;
        }
        const Eigen::MatrixXd diff = adversarial[i].x - test[i].x;
        l2_sum += diff.norm();
        ev.max_l_inf = std::max(ev.max_l_inf, diff.cwiseAbs().maxCoeff());
    }
    const auto n = static_cast<double>(test.size());
    ev.post_attack_accuracy = static_cast<double>(correct) / n;
    ev.success_rate = 1.0 - ev.post_attack_accuracy;
    ev.clean_accuracy = static_cast<double>(clean_correct) / n;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ev.attack_class_accuracy = n_attack ? static_cast<double>(ok_attack) / static_cast<double>(n_attack) : nan;
    ev.normal_class_accuracy = n_normal ? static_cast<double>(ok_normal) / static_cast<double>(n_normal) : nan;
    ev.mean_l2 = l2_sum / n;
    return ev;
}

std::vector<SweepRow> epsilon_sweep(const DetectorModel& model, const std::vector<SampleWindow>& test,
                                    const AttackConfig& base, const std::vector<double>& epsilons,
                                    double alpha_fraction) {
    if (epsilons.empty()) throw ConfigError("epsilon sweep needs at least one epsilon");
    if (!std::is_sorted(epsilons.begin(), epsilons.end())) throw ConfigError("sweep epsilons must be ascending");
    std::vector<SweepRow> rows;
    for (double eps : epsilons) {
        SweepRow row{base.kind, eps, 0.0, 1, 0.0, 0.0};
        if (base.kind == AttackKind::bim) {
            row.alpha = alpha_fraction * eps;
            row.iterations = base.iterations;
        }
        const auto ev = attack_success_rate(model, test, config_for(base, row));
        row.success_rate = ev.success_rate;
        row.post_attack_accuracy = ev.post_attack_accuracy;
        rows.push_back(row);
    }
    return rows;
}

const SweepRow& operating_point(const std::vector<SweepRow>& rows, double target) {
    if (rows.empty()) throw ContractError("empty sweep");
    for (const auto& r : rows) {
        if (r.success_rate >= target) return r;
    }
    const SweepRow* best = &rows.front();
    for (const auto& r : rows) {
        if (r.success_rate > best->success_rate) best = &r;
    }
    return *best;
}

AttackConfig config_for(const AttackConfig& base, const SweepRow& row) {
    AttackConfig cfg = base;
    cfg.kind = row.kind;
    cfg.epsilon = row.epsilon;
    if (row.kind == AttackKind::bim) {
        cfg.alpha = row.alpha;
        cfg.iterations = row.iterations;
    }
    return cfg;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "kind,epsilon,alpha,iterations,success_rate,post_attack_accuracy\n" << std::setprecision(17);
    for (const auto& r : rows) {
        out << to_string(r.kind) << ',' << r.epsilon << ',' << r.alpha << ',' << r.iterations << ',' << r.success_rate
            << ',' << r.post_attack_accuracy << '\n';
    }
}

}  // namespace canadv
