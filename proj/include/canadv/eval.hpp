#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "canadv/nnet.hpp"
#include "canadv/traffic.hpp"

namespace canadv {

// Attack is the positive class. Macro figures average both classes.
struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double wall_time_s = 0.0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
MetricsReport metrics_from_predictions(std::span<const Label> truth, std::span<const Label> predicted);
MetricsReport compute_metrics(const DetectorModel& model, const std::vector<SampleWindow>& dataset);

struct ComparisonConfig {
    ModelConfig model;
    FitConfig fit;  // its optimizer field is replaced per row
};

struct ComparisonRow {
    OptimizerKind optimizer;
    MetricsReport metrics;  // on the test set; wall_time_s covers fit only
    std::vector<EpochRecord> history;
};

// One model per optimizer, all from the same initial weights and shuffle seed.
std::vector<ComparisonRow> optimizer_comparison(const std::vector<SampleWindow>& train,
                                                const std::vector<SampleWindow>& val,
                                                const std::vector<SampleWindow>& test,
                                                const std::vector<OptimizerSettings>& optimizers,
                                                const ComparisonConfig& cfg);

// optimizer,accuracy,recall,precision,f1,time_s followed by the macro columns.
void write_table_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);

// Writes <prefix>_history.csv, <prefix>_accuracy.csv and <prefix>_loss.csv; returns the paths.
std::vector<std::string> emit_curves(const std::vector<EpochRecord>& history, const std::string& prefix);

}  // namespace canadv
