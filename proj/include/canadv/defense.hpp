#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "canadv/attacks.hpp"
#include "canadv/nnet.hpp"
#include "canadv/traffic.hpp"

namespace canadv {

struct RetrainConfig {
    int batch_n = 200;
    int max_iterations = 100;
    std::vector<AttackConfig> attacks;  // round-robin when more than one
    int stop_window = 5;
    double stop_threshold = 0.99;
    std::uint64_t seed = 0;
    int minibatch_size = 32;
    // Used when no optimizer state is handed in.
    OptimizerSettings optimizer;

    void validate() const;
};

struct RetrainRecord {
    int iteration = 0;
    double train_acc = 0.0;
    double val_clean_acc = 0.0;
    double val_adv_acc = 0.0;
    AttackKind attack_kind = AttackKind::fgsm;
    std::size_t clean_in_batch = 0;
    std::size_t adversarial_in_batch = 0;
    std::size_t repository_size = 0;
};

struct RetrainState {
    DetectorModel model;                    // M_i, and M_f once the loop ends
    std::vector<SampleWindow> repository;   // every S'_i, append-only
    int iteration = 0;
    std::vector<RetrainRecord> history;
    bool stopped_early = false;
};

// Iterative adversarial retraining. Each iteration draws N clean windows without
// replacement, attacks them against the current model (labels kept), appends them
// to the repository, draws N repository windows, trains one epoch over the 2N
// batch and scores clean and attacked validation accuracy. Stops once attacked
// validation accuracy stays >= stop_threshold for stop_window iterations, or at
// max_iterations. Windows are in normalized units.
RetrainState adversarial_retrain(const DetectorModel& initial, const std::vector<SampleWindow>& train,
                                 const std::vector<SampleWindow>& val, const RetrainConfig& cfg,
                                 std::optional<Optimizer> optimizer = std::nullopt);

// First iteration after which attacked validation accuracy stays within +-band of
// its final value; nullopt for an empty history.
std::optional<int> stabilization_iteration(const std::vector<RetrainRecord>& history, double band = 0.02);

struct RobustnessRow {
    AttackConfig attack;
    double clean_acc = 0.0;
    double adv_acc = 0.0;
};

struct RobustnessReport {
    double clean_acc = 0.0;
    std::vector<RobustnessRow> rows;
};

RobustnessReport evaluate_robustness(const DetectorModel& model, const std::vector<SampleWindow>& test,
                                     const std::vector<AttackConfig>& attacks);

void write_retrain_csv(std::ostream& out, const std::vector<RetrainRecord>& history);
void write_robustness_csv(std::ostream& out, const RobustnessReport& report);

}  // namespace canadv
