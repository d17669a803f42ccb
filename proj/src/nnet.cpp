#include "canadv/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "binary_io.hpp"
#include "canadv/error.hpp"
#include "canadv/random.hpp"

namespace canadv {

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'C', 'A', 'N', 'L', 'S', 'T', 'M', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::array<char, 4> kGateOrder{'i', 'f', 'g', 'o'};

// Chunk size for inference-only passes.
constexpr std::size_t kEvalBatch = 64;

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

}  // namespace

void ModelConfig::validate() const {
    std::vector<std::string> problems;
    if (input_dim < 1) problems.emplace_back("model.input_dim must be >= 1");
    if (hidden_dim < 1) problems.emplace_back("model.hidden_dim must be >= 1");
    if (seq_len < 1) problems.emplace_back("model.seq_len must be >= 1");
    if (!(threshold > 0.0 && threshold < 1.0)) problems.emplace_back("model.threshold must be in (0,1)");
    if (!problems.empty()) throw ConfigError(problems);
}

std::size_t parameter_count(int input_dim, int hidden_dim) {
    const auto d = static_cast<std::size_t>(input_dim);
    const auto h = static_cast<std::size_t>(hidden_dim);
    return 4 * (h * (d + h) + h) + h + 1;
}

Parameters::Parameters(int input_dim, int hidden_dim)
    : input_dim_(input_dim),
      hidden_dim_(hidden_dim),
      flat_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count(input_dim, hidden_dim)))) {}

std::size_t Parameters::offset_U() const {
    return 4 * static_cast<std::size_t>(hidden_dim_) * static_cast<std::size_t>(input_dim_);
}
std::size_t Parameters::offset_b() const {
    return offset_U() + 4 * static_cast<std::size_t>(hidden_dim_) * static_cast<std::size_t>(hidden_dim_);
}
std::size_t Parameters::offset_w_out() const { return offset_b() + 4 * static_cast<std::size_t>(hidden_dim_); }

Eigen::Map<RowMajorMatrix> Parameters::W() { return {flat_.data(), 4 * hidden_dim_, input_dim_}; }
Eigen::Map<const RowMajorMatrix> Parameters::W() const { return {flat_.data(), 4 * hidden_dim_, input_dim_}; }
Eigen::Map<RowMajorMatrix> Parameters::U() {
    return {flat_.data() + offset_U(), 4 * hidden_dim_, hidden_dim_};
}
Eigen::Map<const RowMajorMatrix> Parameters::U() const {
    return {flat_.data() + offset_U(), 4 * hidden_dim_, hidden_dim_};
}
Eigen::Map<Eigen::VectorXd> Parameters::b() { return {flat_.data() + offset_b(), 4 * hidden_dim_}; }
Eigen::Map<const Eigen::VectorXd> Parameters::b() const { return {flat_.data() + offset_b(), 4 * hidden_dim_}; }
Eigen::Map<Eigen::VectorXd> Parameters::w_out() { return {flat_.data() + offset_w_out(), hidden_dim_}; }
Eigen::Map<const Eigen::VectorXd> Parameters::w_out() const {
    return {flat_.data() + offset_w_out(), hidden_dim_};
}

std::uint64_t Parameters::fingerprint() const {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(flat_.data());
    const auto n = static_cast<std::size_t>(flat_.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

DetectorModel init_model(const ModelConfig& cfg) {
    cfg.validate();
    DetectorModel model{cfg, Parameters(cfg.input_dim, cfg.hidden_dim)};
    Rng rng(cfg.init_seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
    auto draw = [&](auto&& block) {
        for (Eigen::Index r = 0; r < block.rows(); ++r) {
            for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = rng.uniform(-bound, bound);
        }
    };
    draw(model.params.W());
    draw(model.params.U());
    draw(model.params.w_out());
    model.params.b().setZero();
    model.params.b().segment(cfg.hidden_dim, cfg.hidden_dim).setOnes();
    model.params.b_out() = 0.0;
    return model;
}

SequenceBatch::SequenceBatch(Eigen::Index steps, Eigen::Index batch, Eigen::Index features)
    : steps_(steps), batch_(batch), features_(features), data_(Eigen::MatrixXd::Zero(features, steps * batch)) {}

SequenceBatch SequenceBatch::pack(std::span<const Eigen::MatrixXd> samples) {
    if (samples.empty()) throw ContractError("cannot pack an empty batch");
    SequenceBatch out(samples.front().rows(), static_cast<Eigen::Index>(samples.size()), samples.front().cols());
    for (std::size_t b = 0; b < samples.size(); ++b) out.set_sample(static_cast<Eigen::Index>(b), samples[b]);
    return out;
}

SequenceBatch SequenceBatch::pack(const std::vector<SampleWindow>& windows, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("cannot pack an empty batch");
    const auto& first = windows.at(indices.front()).x;
    SequenceBatch out(first.rows(), static_cast<Eigen::Index>(indices.size()), first.cols());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        out.set_sample(static_cast<Eigen::Index>(b), windows.at(indices[b]).x);
    }
    return out;
}

SequenceBatch SequenceBatch::pack(const std::vector<SampleWindow>& windows) {
    std::vector<std::size_t> all(windows.size());
    std::iota(all.begin(), all.end(), 0);
    return pack(windows, all);
}

Eigen::MatrixXd SequenceBatch::sample(Eigen::Index b) const {
    Eigen::MatrixXd x(steps_, features_);
    for (Eigen::Index t = 0; t < steps_; ++t) x.row(t) = data_.col(t * batch_ + b).transpose();
    return x;
}

void SequenceBatch::set_sample(Eigen::Index b, const Eigen::MatrixXd& x) {
    if (x.rows() != steps_ || x.cols() != features_) throw ContractError("sample shape does not match the batch");
    for (Eigen::Index t = 0; t < steps_; ++t) data_.col(t * batch_ + b) = x.row(t).transpose();
}

ForwardCache forward_batch(const DetectorModel& model, const SequenceBatch& inputs) {
    const auto& p = model.params;
    const Eigen::Index H = p.hidden_dim();
    const Eigen::Index T = inputs.steps();
    const Eigen::Index B = inputs.batch();
    if (inputs.features() != p.input_dim()) {
        throw ContractError("input has " + std::to_string(inputs.features()) + " features, model expects " +
                            std::to_string(p.input_dim()));
    }
    if (T < 1 || B < 1) throw ContractError("empty input batch");
    if (!inputs.data().allFinite()) throw NumericError("non-finite value in model input");

    ForwardCache cache;
    cache.steps = T;
    cache.batch = B;
    cache.model_fingerprint = p.fingerprint();
    cache.gates.noalias() = p.W() * inputs.data();
    cache.gates.colwise() += p.b();
    cache.cells = Eigen::MatrixXd::Zero(H, (T + 1) * B);
    cache.hidden = Eigen::MatrixXd::Zero(H, (T + 1) * B);

    Eigen::MatrixXd recurrent(4 * H, B);
    for (Eigen::Index t = 0; t < T; ++t) {
        auto z = cache.gates.middleCols(t * B, B);
        recurrent.noalias() = p.U() * cache.hidden.middleCols(t * B, B);
        z += recurrent;
        z.topRows(2 * H) = z.topRows(2 * H).array().logistic();
        z.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh();
        z.bottomRows(H) = z.bottomRows(H).array().logistic();

        const auto c_prev = cache.cells.middleCols(t * B, B);
        auto c = cache.cells.middleCols((t + 1) * B, B);
        c = z.middleRows(H, H).cwiseProduct(c_prev) + z.topRows(H).cwiseProduct(z.middleRows(2 * H, H));
        cache.hidden.middleCols((t + 1) * B, B) = z.bottomRows(H).cwiseProduct(Eigen::MatrixXd(c.array().tanh()));
    }

    cache.logits = (p.w_out().transpose() * cache.hidden.rightCols(B)).transpose();
    cache.logits.array() += p.b_out();
    cache.probabilities = cache.logits.array().logistic();
    return cache;
}

BatchGradients backward_batch(const DetectorModel& model, const ForwardCache& cache, const SequenceBatch& inputs,
                              std::span<const double> labels, GradientRequest request) {
    const auto& p = model.params;
    const Eigen::Index H = p.hidden_dim();
    const Eigen::Index T = cache.steps;
    const Eigen::Index B = cache.batch;
    if (cache.model_fingerprint != p.fingerprint()) throw ContractError("cache was produced by a different model");
    if (inputs.steps() != T || inputs.batch() != B || inputs.features() != p.input_dim()) {
        throw ContractError("inputs do not match the forward cache");
    }
    if (static_cast<Eigen::Index>(labels.size()) != B) throw ContractError("one label per sample is required");

    BatchGradients out;
    out.losses.resize(B);
    Eigen::VectorXd dlogit(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const double y = labels[static_cast<std::size_t>(b)];
        out.losses(b) = bce_loss(cache.probabilities(b), y);
        dlogit(b) = cache.probabilities(b) - y;
    }

    Eigen::MatrixXd dZ(4 * H, T * B);
    Eigen::MatrixXd dh = p.w_out() * dlogit.transpose();
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(H, B);
    Eigen::ArrayXXd tanh_c(H, B);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const auto gates = cache.gates.middleCols(t * B, B).array();
        const auto i = gates.topRows(H);
        const auto f = gates.middleRows(H, H);
        const auto g = gates.middleRows(2 * H, H);
        const auto o = gates.bottomRows(H);
        const auto c_prev = cache.cells.middleCols(t * B, B).array();
        tanh_c = cache.cells.middleCols((t + 1) * B, B).array().tanh();

        auto dz = dZ.middleCols(t * B, B);
        dc.array() += dh.array() * o * (1.0 - tanh_c.square());
        dz.bottomRows(H).array() = dh.array() * tanh_c * o * (1.0 - o);
        dz.topRows(H).array() = dc.array() * g * i * (1.0 - i);
        dz.middleRows(H, H).array() = dc.array() * c_prev * f * (1.0 - f);
        dz.middleRows(2 * H, H).array() = dc.array() * i * (1.0 - g.square());
        dc.array() *= f;
        if (t > 0) dh.noalias() = p.U().transpose() * dz;
    }

    if (request.params) {
        out.params = Parameters(p.input_dim(), H);
        out.params.W().noalias() = dZ * inputs.data().transpose();
        out.params.U().noalias() = dZ * cache.hidden.leftCols(T * B).transpose();
        out.params.b() = dZ.rowwise().sum();
        out.params.w_out().noalias() = cache.hidden.rightCols(B) * dlogit;
        out.params.b_out() = dlogit.sum();
    }
    if (request.inputs) {
        out.inputs = SequenceBatch(T, B, p.input_dim());
        out.inputs.data().noalias() = p.W().transpose() * dZ;
    }
    return out;
}

ForwardResult forward(const DetectorModel& model, const Eigen::MatrixXd& x) {
    if (x.rows() != model.config.seq_len || x.cols() != model.config.input_dim) {
        throw ContractError("window shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                            " does not match the model");
    }
    auto cache = forward_batch(model, SequenceBatch::pack(std::span<const Eigen::MatrixXd>(&x, 1)));
    const double p = cache.probabilities(0);
    return {p, std::move(cache)};
}

BackwardResult backward(const DetectorModel& model, const ForwardCache& cache, const Eigen::MatrixXd& x, Label label) {
    if (cache.batch != 1) throw ContractError("single-sample backward needs a single-sample cache");
    const double y = label_value(label);
    auto grads = backward_batch(model, cache, SequenceBatch::pack(std::span<const Eigen::MatrixXd>(&x, 1)),
                                std::span<const double>(&y, 1));
    return {std::move(grads.params), grads.inputs.sample(0)};
}

double bce_loss(double probability, double label) {
    const double p = clamp_probability(probability);
    return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

double bce_loss(double probability, Label label) { return bce_loss(probability, label_value(label)); }

Label classify(double probability, double threshold) {
    return probability >= threshold ? Label::Attack : Label::Normal;
}

Label predict(const DetectorModel& model, const Eigen::MatrixXd& x) {
    return classify(forward(model, x).probability, model.config.threshold);
}

std::vector<double> predict_probabilities(const DetectorModel& model, const std::vector<SampleWindow>& windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += kEvalBatch) {
        const auto end = std::min(windows.size(), start + kEvalBatch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto cache = forward_batch(model, SequenceBatch::pack(windows, idx));
        for (Eigen::Index b = 0; b < cache.batch; ++b) out.push_back(cache.probabilities(b));
    }
    return out;
}

std::vector<Label> predict_batch(const DetectorModel& model, const std::vector<SampleWindow>& windows) {
    std::vector<Label> out;
    out.reserve(windows.size());
    for (double p : predict_probabilities(model, windows)) out.push_back(classify(p, model.config.threshold));
    return out;
}

std::string to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::adagrad: return "adagrad";
    }
    return "unknown";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "sgd") return OptimizerKind::sgd;
    if (lower == "adam") return OptimizerKind::adam;
    if (lower == "rmsprop") return OptimizerKind::rmsprop;
    if (lower == "adagrad") return OptimizerKind::adagrad;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd, adam, rmsprop or adagrad)");
}

OptimizerSettings OptimizerSettings::defaults(OptimizerKind kind) {
    OptimizerSettings s;
    s.kind = kind;
    s.learning_rate = (kind == OptimizerKind::adam || kind == OptimizerKind::rmsprop) ? 0.001 : 0.01;
    return s;
}

Optimizer::Optimizer(OptimizerSettings settings, std::size_t parameter_count)
    : settings_(settings),
      first_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count))),
      second_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count))) {}

void Optimizer::step(Parameters& params, const Parameters& grads) {
    auto& w = params.flat();
    const auto& g = grads.flat();
    if (w.size() != g.size() || w.size() != first_.size()) {
        throw ContractError("gradient shape does not match the parameters");
    }
    ++steps_;
    const double lr = settings_.learning_rate;
    const double eps = settings_.epsilon;
    switch (settings_.kind) {
        case OptimizerKind::sgd:
            w -= lr * g;
            break;
        case OptimizerKind::adam: {
            const double b1 = settings_.beta1;
            const double b2 = settings_.beta2;
            first_ = b1 * first_ + (1.0 - b1) * g;
            second_.array() = b2 * second_.array() + (1.0 - b2) * g.array().square();
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
            w.array() -= lr * (first_.array() / c1) / ((second_.array() / c2).sqrt() + eps);
            break;
        }
        case OptimizerKind::rmsprop: {
            const double rho = settings_.rho;
            second_.array() = rho * second_.array() + (1.0 - rho) * g.array().square();
            w.array() -= lr * g.array() / (second_.array().sqrt() + eps);
            break;
        }
        case OptimizerKind::adagrad:
            second_.array() += g.array().square();
            w.array() -= lr * g.array() / (second_.array().sqrt() + eps);
            break;
    }
}

EvalSummary evaluate(const DetectorModel& model, const std::vector<SampleWindow>& windows) {
    if (windows.empty()) throw ContractError("cannot evaluate on an empty set");
    const auto probs = predict_probabilities(model, windows);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        loss += bce_loss(probs[i], windows[i].label);
        if (classify(probs[i], model.config.threshold) == windows[i].label) ++correct;
    }
    const auto n = static_cast<double>(windows.size());
    return {loss / n, static_cast<double>(correct) / n};
}

EpochSummary train_epoch(DetectorModel& model, Optimizer& optimizer, const std::vector<SampleWindow>& windows,
                         std::span<const std::size_t> indices, int batch_size) {
    if (batch_size < 1) throw ContractError("batch size must be >= 1");
    EpochSummary summary;
    std::size_t correct = 0;
    std::vector<double> labels;
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        const auto chunk = indices.subspan(start, end - start);
        const auto batch = SequenceBatch::pack(windows, chunk);
        labels.clear();
        for (auto i : chunk) labels.push_back(label_value(windows[i].label));

        const auto cache = forward_batch(model, batch);
        auto grads = backward_batch(model, cache, batch, labels, GradientRequest{true, false});
        for (Eigen::Index b = 0; b < cache.batch; ++b) {
            if (classify(cache.probabilities(b), model.config.threshold) == windows[chunk[b]].label) ++correct;
        }
        summary.loss += grads.losses.sum();
        grads.params.flat() /= static_cast<double>(chunk.size());
        optimizer.step(model.params, grads.params);
        ++summary.steps;
    }
    if (!indices.empty()) {
        summary.loss /= static_cast<double>(indices.size());
        summary.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    }
    return summary;
}

FitResult fit(DetectorModel& model, const std::vector<SampleWindow>& train, const std::vector<SampleWindow>& val,
              const FitConfig& cfg) {
    if (train.empty() || val.empty()) throw ContractError("fit needs non-empty training and validation sets");
    if (cfg.epochs < 0) throw ConfigError("training.epochs must be >= 0");
    FitResult result{{}, Optimizer(cfg.optimizer, model.parameter_count())};
    Rng rng(cfg.shuffle_seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        const auto pass = train_epoch(model, result.optimizer, train, order, cfg.batch_size);
        const auto v = evaluate(model, val);
        result.history.push_back(EpochRecord{epoch, pass.loss, pass.accuracy, v.loss, v.accuracy});
    }
    return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,train_loss,train_acc,val_loss,val_acc\n" << std::setprecision(17);
    for (const auto& r : history) {
        out << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ',' << r.val_acc << '\n';
    }
}

void save_checkpoint(const std::string& path, const DetectorModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(model.config.input_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(model.config.hidden_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(model.config.seq_len));
    out.write(kGateOrder.data(), kGateOrder.size());
    detail::put_f64(out, model.config.threshold);
    detail::put_u64(out, model.config.init_seed);
    detail::put_u64(out, model.params.size());
    for (Eigen::Index i = 0; i < model.params.flat().size(); ++i) detail::put_f64(out, model.params.flat()(i));
    if (!out) throw IoError("failed writing checkpoint " + path);
}

DetectorModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    detail::expect_magic(in, kCheckpointMagic, "checkpoint");
    const auto version = detail::get_u32(in);
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.input_dim = static_cast<int>(detail::get_u32(in));
    cfg.hidden_dim = static_cast<int>(detail::get_u32(in));
    cfg.seq_len = static_cast<int>(detail::get_u32(in));
    std::array<char, 4> order{};
    in.read(order.data(), order.size());
    if (!in || order != kGateOrder) throw IoError("checkpoint " + path + " uses an unknown gate order");
    cfg.threshold = detail::get_f64(in);
    cfg.init_seed = detail::get_u64(in);
    cfg.validate();
    const auto count = detail::get_u64(in);
    DetectorModel model{cfg, Parameters(cfg.input_dim, cfg.hidden_dim)};
    if (count != model.params.size()) throw IoError("checkpoint parameter count does not match its header");
    for (Eigen::Index i = 0; i < model.params.flat().size(); ++i) model.params.flat()(i) = detail::get_f64(in);
    return model;
}

}  // namespace canadv
