#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "canadv/nnet.hpp"
#include "canadv/traffic.hpp"

namespace canadv {

enum class AttackKind { fgsm, bim };

std::string to_string(AttackKind kind);
AttackKind attack_from_string(const std::string& name);

// Budgets are in the model's normalized input units.
struct AttackConfig {
    AttackKind kind = AttackKind::fgsm;
    double epsilon = 0.1;
    double alpha = 0.02;  // BIM step
    int iterations = 5;   // BIM
    bool clamp_to_domain = true;
    double domain_min = 0.0;
    double domain_max = 1.0;
    // Perturb only the timesteps a false data injection touched.
    bool span_mask = false;
    // BIM: reuse the gradient at the clean input for every step.
    bool frozen_gradient = false;

    void validate() const;
    std::string describe() const;
};

struct AttackOutcome {
    Eigen::MatrixXd adversarial;
    Label original_prediction = Label::Normal;
    Label adversarial_prediction = Label::Normal;
    bool flipped = false;
    double l_inf_distance = 0.0;
    double l2_distance = 0.0;
};

// X' = X + eps * sign(grad_X J(X, y)); sign(0) = 0.
AttackOutcome fgsm(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg);

// X'_{k+1} = Clip_{X,eps}(X'_k + alpha * sign(grad_X J(X'_k, y))).
AttackOutcome bim(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg);

// Dispatches on cfg.kind.
AttackOutcome run_attack(const DetectorModel& model, const Eigen::MatrixXd& x, Label y_label, const AttackConfig& cfg);

// Adversarial copies of normalized windows; labels and metadata are kept.
std::vector<SampleWindow> perturb_windows(const DetectorModel& model, const std::vector<SampleWindow>& windows,
                                          const AttackConfig& cfg);

struct AttackEvaluation {
    double success_rate = 0.0;
    double post_attack_accuracy = 0.0;
    double clean_accuracy = 0.0;
    // Post-attack accuracy restricted to each true class (NaN when the class is absent).
    double attack_class_accuracy = 0.0;
    double normal_class_accuracy = 0.0;
    double mean_l2 = 0.0;
    double max_l_inf = 0.0;
    std::size_t samples = 0;
    double wall_time_s = 0.0;
};

// Untargeted attack on every window; success_rate = 1 - post_attack_accuracy.
AttackEvaluation attack_success_rate(const DetectorModel& model, const std::vector<SampleWindow>& test,
                                     const AttackConfig& cfg);

struct SweepRow {
    AttackKind kind;
    double epsilon;
    double alpha;
    int iterations;
    double success_rate;
    double post_attack_accuracy;
};

// One row per epsilon. For BIM, alpha = alpha_fraction * epsilon (the base alpha is ignored).
std::vector<SweepRow> epsilon_sweep(const DetectorModel& model, const std::vector<SampleWindow>& test,
                                    const AttackConfig& base, const std::vector<double>& epsilons,
                                    double alpha_fraction = 0.2);

// Smallest epsilon reaching `target` success; the best row when none does.
const SweepRow& operating_point(const std::vector<SweepRow>& rows, double target);

AttackConfig config_for(const AttackConfig& base, const SweepRow& row);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace canadv
