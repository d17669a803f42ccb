#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "canadv/traffic.hpp"

namespace canadv {

struct ModelConfig {
    int input_dim = 20;
    int hidden_dim = 128;
    int seq_len = 100;
    std::uint64_t init_seed = 0;
    double threshold = 0.5;

    void validate() const;
};

// 4 * (h * (d + h) + h) + h + 1
std::size_t parameter_count(int input_dim, int hidden_dim);

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// All trainable values in one contiguous vector, laid out as
//   W (4h x d, row-major) | U (4h x h, row-major) | b (4h) | w_out (h) | b_out
// Gate blocks within W, U and b are ordered input, forget, candidate, output.
// Gradients and optimizer accumulators use the same type.
class Parameters {
public:
    Parameters() = default;
    Parameters(int input_dim, int hidden_dim);

    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return hidden_dim_; }
    std::size_t size() const { return static_cast<std::size_t>(flat_.size()); }

    Eigen::VectorXd& flat() { return flat_; }
    const Eigen::VectorXd& flat() const { return flat_; }

    Eigen::Map<RowMajorMatrix> W();
    Eigen::Map<const RowMajorMatrix> W() const;
    Eigen::Map<RowMajorMatrix> U();
    Eigen::Map<const RowMajorMatrix> U() const;
    Eigen::Map<Eigen::VectorXd> b();
    Eigen::Map<const Eigen::VectorXd> b() const;
    Eigen::Map<Eigen::VectorXd> w_out();
    Eigen::Map<const Eigen::VectorXd> w_out() const;
    double& b_out() { return flat_(flat_.size() - 1); }
    double b_out() const { return flat_(flat_.size() - 1); }

    // FNV-1a over the raw bytes; ties caches to the parameters that built them.
    std::uint64_t fingerprint() const;

private:
    std::size_t offset_U() const;
    std::size_t offset_b() const;
    std::size_t offset_w_out() const;

    int input_dim_ = 0;
    int hidden_dim_ = 0;
    Eigen::VectorXd flat_;
};

struct DetectorModel {
    ModelConfig config;
    Parameters params;

    std::size_t parameter_count() const { return params.size(); }
};

// Uniform(+-1/sqrt(hidden)) weights, zero biases except the forget gate (1).
DetectorModel init_model(const ModelConfig& cfg);

// Several sequences side by side: column t * batch + b holds timestep t of sample b.
class SequenceBatch {
public:
    SequenceBatch() = default;
    SequenceBatch(Eigen::Index steps, Eigen::Index batch, Eigen::Index features);

    static SequenceBatch pack(std::span<const Eigen::MatrixXd> samples);
    static SequenceBatch pack(const std::vector<SampleWindow>& windows, std::span<const std::size_t> indices);
    static SequenceBatch pack(const std::vector<SampleWindow>& windows);

    Eigen::Index steps() const { return steps_; }
    Eigen::Index batch() const { return batch_; }
    Eigen::Index features() const { return features_; }

    Eigen::MatrixXd& data() { return data_; }
    const Eigen::MatrixXd& data() const { return data_; }

    // One sample as a steps x features matrix.
    Eigen::MatrixXd sample(Eigen::Index b) const;
    void set_sample(Eigen::Index b, const Eigen::MatrixXd& x);

private:
    Eigen::Index steps_ = 0;
    Eigen::Index batch_ = 0;
    Eigen::Index features_ = 0;
    Eigen::MatrixXd data_;
};

struct ForwardCache {
    Eigen::Index steps = 0;
    Eigen::Index batch = 0;
    std::uint64_t model_fingerprint = 0;
    Eigen::MatrixXd gates;   // 4h x (steps*batch), activated i, f, g, o
    Eigen::MatrixXd cells;   // h x ((steps+1)*batch); block 0 is the zero initial state
    Eigen::MatrixXd hidden;  // h x ((steps+1)*batch)
    Eigen::VectorXd logits;
    Eigen::VectorXd probabilities;
};

ForwardCache forward_batch(const DetectorModel& model, const SequenceBatch& inputs);

struct BatchGradients {
    Parameters params;       // summed over the batch
    SequenceBatch inputs;    // each sample's gradient of its own loss
    Eigen::VectorXd losses;
};

struct GradientRequest {
    bool params = true;
    bool inputs = true;
};

BatchGradients backward_batch(const DetectorModel& model, const ForwardCache& cache, const SequenceBatch& inputs,
                              std::span<const double> labels, GradientRequest request = {});

struct ForwardResult {
    double probability;
    ForwardCache cache;
};

// Single window in normalized units, seq_len x input_dim.
ForwardResult forward(const DetectorModel& model, const Eigen::MatrixXd& x);

struct BackwardResult {
    Parameters param_grads;
    Eigen::MatrixXd input_grad;
};

BackwardResult backward(const DetectorModel& model, const ForwardCache& cache, const Eigen::MatrixXd& x, Label label);

inline constexpr double kProbabilityClamp = 1e-12;

// Binary cross-entropy with p clamped to [1e-12, 1 - 1e-12].
double bce_loss(double probability, Label label);
double bce_loss(double probability, double label);

Label predict(const DetectorModel& model, const Eigen::MatrixXd& x);
Label classify(double probability, double threshold);
std::vector<double> predict_probabilities(const DetectorModel& model, const std::vector<SampleWindow>& windows);
std::vector<Label> predict_batch(const DetectorModel& model, const std::vector<SampleWindow>& windows);

enum class OptimizerKind { sgd, adam, rmsprop, adagrad };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double rho = 0.9;
    double epsilon = 1e-7;

    static OptimizerSettings defaults(OptimizerKind kind);
};

class Optimizer {
public:
    Optimizer(OptimizerSettings settings, std::size_t parameter_count);

    void step(Parameters& params, const Parameters& grads);

    const OptimizerSettings& settings() const { return settings_; }
    long steps() const { return steps_; }
    // First moment (Adam) and squared-gradient accumulator (Adam, RMSprop, Adagrad).
    const Eigen::VectorXd& first_moment() const { return first_; }
    const Eigen::VectorXd& second_moment() const { return second_; }

private:
    OptimizerSettings settings_;
    long steps_ = 0;
    Eigen::VectorXd first_;
    Eigen::VectorXd second_;
};

struct FitConfig {
    int epochs = 50;
    int batch_size = 32;
    OptimizerSettings optimizer;
    std::uint64_t shuffle_seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct EvalSummary {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Mean loss and accuracy over normalized windows.
EvalSummary evaluate(const DetectorModel& model, const std::vector<SampleWindow>& windows);

struct EpochSummary {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t steps = 0;
};

// One pass over `indices` in mini-batches; each step uses the batch-mean gradient.
// Loss and accuracy are averaged over samples as seen during the pass.
EpochSummary train_epoch(DetectorModel& model, Optimizer& optimizer, const std::vector<SampleWindow>& windows,
                         std::span<const std::size_t> indices, int batch_size);

struct FitResult {
    std::vector<EpochRecord> history;
    Optimizer optimizer;
};

FitResult fit(DetectorModel& model, const std::vector<SampleWindow>& train, const std::vector<SampleWindow>& val,
              const FitConfig& cfg);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

// Binary checkpoint; layout documented in docs/formats.md.
void save_checkpoint(const std::string& path, const DetectorModel& model);
DetectorModel load_checkpoint(const std::string& path);

}  // namespace canadv
