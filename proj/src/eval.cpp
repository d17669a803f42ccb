#include "canadv/eval.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "canadv/error.hpp"

namespace canadv {

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

}  // namespace

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    MetricsReport m;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    m.accuracy = ratio(tp + tn, tp + fp + tn + fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = harmonic(m.precision, m.recall);
    // Normal as the positive class, for the macro averages.
    const double precision_n = ratio(tn, tn + fn);
    const double recall_n = ratio(tn, tn + fp);
    m.macro_precision = 0.5 * (m.precision + precision_n);
    m.macro_recall = 0.5 * (m.recall + recall_n);
    m.macro_f1 = 0.5 * (m.f1 + harmonic(precision_n, recall_n));
    return m;
}

MetricsReport metrics_from_predictions(std::span<const Label> truth, std::span<const Label> predicted) {
    if (truth.size() != predicted.size()) throw ContractError("label and prediction counts differ");
    if (truth.empty()) throw ContractError("metrics need a non-empty dataset");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool actual = truth[i] == Label::Attack;
        const bool flagged = predicted[i] == Label::Attack;
        tp += actual && flagged;
        fp += !actual && flagged;
        tn += !actual && !flagged;
        fn += actual && !flagged;
    }
    return metrics_from_counts(tp, fp, tn, fn);
}

MetricsReport compute_metrics(const DetectorModel& model, const std::vector<SampleWindow>& dataset) {
    if (dataset.empty()) throw ContractError("metrics need a non-empty dataset");
    std::vector<Label> truth;
    truth.reserve(dataset.size());
    for (const auto& w : dataset) truth.push_back(w.label);
    const auto predicted = predict_batch(model, dataset);
    return metrics_from_predictions(truth, predicted);
}

std::vector<ComparisonRow> optimizer_comparison(const std::vector<SampleWindow>& train,
                                                const std::vector<SampleWindow>& val,
                                                const std::vector<SampleWindow>& test,
                                                const std::vector<OptimizerSettings>& optimizers,
                                                const ComparisonConfig& cfg) {
    if (optimizers.empty()) throw ConfigError("optimizer comparison needs at least one optimizer");
    std::vector<ComparisonRow> rows;
    for (const auto& settings : optimizers) {
        auto model = init_model(cfg.model);
        FitConfig fit_cfg = cfg.fit;
        fit_cfg.optimizer = settings;
        const auto started = std::chrono::steady_clock::now();
        auto result = fit(model, train, val, fit_cfg);
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        ComparisonRow row{settings.kind, compute_metrics(model, test), std::move(result.history)};
        row.metrics.wall_time_s = elapsed;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_table_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
    out << "optimizer,accuracy,recall,precision,f1,time_s,macro_recall,macro_precision,macro_f1\n"
        << std::setprecision(17);
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out << to_string(r.optimizer) << ',' << m.accuracy << ',' << m.recall << ',' << m.precision << ',' << m.f1
            << ',' << m.wall_time_s << ',' << m.macro_recall << ',' << m.macro_precision << ',' << m.macro_f1 << '\n';
    }
}

std::vector<std::string> emit_curves(const std::vector<EpochRecord>& history, const std::string& prefix) {
    if (history.empty()) throw ContractError("no training history to emit");
    const std::string history_path = prefix + "_history.csv";
    const std::string accuracy_path = prefix + "_accuracy.csv";
    const std::string loss_path = prefix + "_loss.csv";

    auto h = open_for_write(history_path);
    write_history_csv(h, history);

    auto a = open_for_write(accuracy_path);
    a << "epoch,train_acc,val_acc\n" << std::setprecision(17);
    for (const auto& r : history) a << r.epoch << ',' << r.train_acc << ',' << r.val_acc << '\n';

    auto l = open_for_write(loss_path);
    l << "epoch,train_loss,val_loss\n" << std::setprecision(17);
    for (const auto& r : history) l << r.epoch << ',' << r.train_loss << ',' << r.val_loss << '\n';

    if (!h || !a || !l) throw IoError("failed writing curves under " + prefix);
    return {history_path, accuracy_path, loss_path};
}

}  // namespace canadv
