#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "canadv/can_codec.hpp"

namespace canadv {

struct Observation {
    double timestamp;
    double value;
};

// Decoded trace: one observation list per signal, in catalog signal order.
struct SignalSeries {
    std::vector<std::string> names;
    std::vector<std::vector<Observation>> observations;
    double start_time = 0.0;
    double end_time = 0.0;

    std::size_t signal_count() const { return names.size(); }
};

// Uniform lattice: rows are time points start_time + j / rate_hz, columns are signals.
struct SampleGrid {
    std::vector<std::string> names;
    double rate_hz = 10.0;
    double start_time = 0.0;
    Eigen::MatrixXd values;

    double duration() const { return static_cast<double>(values.rows()) / rate_hz; }
    double time_at(Eigen::Index row) const { return start_time + static_cast<double>(row) / rate_hz; }
};

enum class Label : int { Normal = 0, Attack = 1 };

inline double label_value(Label l) { return l == Label::Attack ? 1.0 : 0.0; }

struct SampleWindow {
    Eigen::MatrixXd x;  // timesteps x signals
    double start_time = 0.0;
    double step_s = 0.1;
    Label label = Label::Normal;
    // Timesteps replaced by false data injection; attack_length == 0 when clean.
    int attack_begin = 0;
    int attack_length = 0;

    Eigen::Index timesteps() const { return x.rows(); }
    Eigen::Index signals() const { return x.cols(); }
};

struct DatasetSplit {
    std::vector<SampleWindow> train;
    std::vector<SampleWindow> validation;
    std::vector<SampleWindow> test;
    std::uint64_t split_seed = 0;
};

struct GeneratorOptions {
    double message_period_s = 0.05;
    double jitter_fraction = 0.1;
};

// Synthetic brake/powertrain traffic: per-signal bounded random walk plus two
// slow sinusoids, clamped to the catalog range and quantized to raw counts.
// Signals of one message share timestamps, so the series can be re-encoded
// frame by frame.
SignalSeries generate_trace(const SignalCatalog& catalog, double duration_s, std::uint64_t seed,
                            const GeneratorOptions& options = {});

// Frames for every message tick of a generated series.
std::vector<CanFrame> encode_trace(const SignalSeries& series, const SignalCatalog& catalog);

// Forward-fill onto a uniform grid covering [start_time, end_time).
SampleGrid resample_series(const SignalSeries& series, double rate_hz);

// Observations at exactly the grid times; resample_series inverts it.
SignalSeries series_from_grid(const SampleGrid& grid);

std::vector<SampleWindow> build_windows(const SampleGrid& grid, double window_s = 10.0,
                                        double stride_s = 1.0);

// Seeded shuffle, then 80/10/10 with the remainder going to training.
DatasetSplit split_dataset(std::vector<SampleWindow> samples, std::uint64_t seed);

// Decoded CSV: timestamp,signal_name,value. Duplicate timestamps keep the last row
// and add a message to `warnings` when given.
SignalSeries ingest_decoded_csv(std::istream& in, const SignalCatalog& catalog,
                                std::vector<std::string>* warnings = nullptr);
SignalSeries ingest_decoded_csv(const std::string& path, const SignalCatalog& catalog,
                                std::vector<std::string>* warnings = nullptr);

void write_decoded_csv(std::ostream& out, const std::vector<DecodedSample>& samples);
void write_decoded_csv(std::ostream& out, const SignalSeries& series);

// Min-max scaling to [0,1] from the catalog's physical ranges.
class FeatureScaler {
public:
    FeatureScaler(const SignalCatalog& catalog, const std::vector<std::string>& names);

    Eigen::MatrixXd normalize(const Eigen::MatrixXd& physical) const;
    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& normalized) const;
    SampleWindow normalize(const SampleWindow& window) const;
    std::vector<SampleWindow> normalize(const std::vector<SampleWindow>& windows) const;

    const Eigen::RowVectorXd& minimum() const { return min_; }
    const Eigen::RowVectorXd& span() const { return span_; }

    // Physical-unit budget of one signal expressed in normalized units.
    double to_normalized_epsilon(std::size_t signal, double physical_epsilon) const;

private:
    Eigen::RowVectorXd min_;
    Eigen::RowVectorXd span_;
};

enum class Units : std::uint32_t { physical = 0, normalized = 1 };

struct WindowFile {
    std::vector<std::string> names;
    Units units = Units::physical;
    std::vector<SampleWindow> windows;
};

// Binary window container; layout documented in docs/formats.md.
void save_windows(const std::string& path, const WindowFile& file);
WindowFile load_windows(const std::string& path);

}  // namespace canadv
