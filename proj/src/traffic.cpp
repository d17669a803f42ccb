#include "canadv/traffic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "binary_io.hpp"
#include "canadv/error.hpp"
#include "canadv/random.hpp"

namespace canadv {

namespace {

constexpr std::array<char, 8> kWindowMagic{'C', 'A', 'N', 'W', 'I', 'N', '\0', '\0'};
constexpr std::uint32_t kWindowVersion = 1;

// Integer number of lattice steps for a duration; rejects non-integral products.
Eigen::Index lattice_steps(double seconds, double rate_hz, const char* what) {
    const double exact = seconds * rate_hz;
    const double rounded = std::round(exact);
    if (std::abs(exact - rounded) > 1e-6 || rounded < 1) {
        throw ConfigError(std::string(what) + " of " + std::to_string(seconds) +
                          " s is not a positive multiple of the grid step");
    }
    return static_cast<Eigen::Index>(rounded);
}

struct SignalProcess {
    double center;
    double slow_amp, slow_period, slow_phase;
    double fast_amp, fast_period, fast_phase;
    double walk = 0.0;
};

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

SignalSeries generate_trace(const SignalCatalog& catalog, double duration_s, std::uint64_t seed,
                            const GeneratorOptions& options) {
    if (!(duration_s > 10.0)) throw ConfigError("trace duration must exceed 10 s");
    if (!(options.message_period_s > 0.0) || options.jitter_fraction < 0.0 ||
        options.jitter_fraction >= 1.0) {
        throw ConfigError("invalid generator options");
    }

    Rng rng(seed);
    SignalSeries series;
    series.names = catalog.signal_names();
    series.observations.resize(series.names.size());
    series.start_time = 0.0;
    series.end_time = duration_s;

    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < series.names.size(); ++i) column.emplace(series.names[i], i);

    // Per-signal process parameters, drawn in catalog order. Signals idle near
    // the low end of their range (like pressures and torques at rest) with small
    // excursions, so an injected span is a large upward departure.
    std::vector<SignalProcess> procs(series.names.size());
    for (auto& p : procs) {
        p.center = rng.uniform(0.02, 0.1);
        p.slow_amp = rng.uniform(0.0075, 0.03);
        p.slow_period = rng.uniform(60.0, 300.0);
        p.slow_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        p.fast_amp = rng.uniform(0.0015, 0.0075);
        p.fast_period = rng.uniform(5.0, 30.0);
        p.fast_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    constexpr double reversion = 0.05;
    constexpr double volatility = 0.0045;
    constexpr double walk_bound = 0.0375;
    const double period = options.message_period_s;

    for (const auto& [id, msg] : catalog.messages()) {
        Rng tick_rng = rng.fork();
        double previous = 0.0;
        for (std::size_t k = 0;; ++k) {
            const double t =
                k == 0 ? 0.0 : static_cast<double>(k) * period + tick_rng.uniform() * options.jitter_fraction * period;
            if (t >= duration_s) break;
            const double dt = t - previous;
            previous = t;
            for (const auto& sig : msg.signals) {
                const auto col = column.at(sig.name);
                auto& p = procs[col];
                p.walk += -reversion * p.walk * dt + volatility * std::sqrt(dt) * tick_rng.normal();
                p.walk = std::clamp(p.walk, -walk_bound, walk_bound);
                double u = p.center + p.walk +
                           p.slow_amp * std::sin(2.0 * std::numbers::pi * t / p.slow_period + p.slow_phase) +
                           p.fast_amp * std::sin(2.0 * std::numbers::pi * t / p.fast_period + p.fast_phase);
                u = std::clamp(u, 0.0, 1.0);
                const double phys = quantize(sig, sig.min_phys + u * (sig.max_phys - sig.min_phys));
                series.observations[col].push_back(Observation{t, phys});
            }
        }
    }
    return series;
}

std::vector<CanFrame> encode_trace(const SignalSeries& series, const SignalCatalog& catalog) {
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < series.names.size(); ++i) column.emplace(series.names[i], i);

    std::vector<CanFrame> frames;
    for (const auto& [id, msg] : catalog.messages()) {
        if (msg.signals.empty()) continue;
        std::vector<const std::vector<Observation>*> cols;
        for (const auto& sig : msg.signals) {
            const auto it = column.find(sig.name);
            if (it == column.end()) throw ContractError("series lacks signal " + sig.name);
            cols.push_back(&series.observations[it->second]);
        }
        const auto ticks = cols.front()->size();
        for (const auto* c : cols) {
            if (c->size() != ticks) {
                throw ContractError("signals of message " + msg.name + " are not sampled together");
            }
        }
        for (std::size_t k = 0; k < ticks; ++k) {
            std::map<std::string, double> values;
            const double t = (*cols.front())[k].timestamp;
            for (std::size_t s = 0; s < cols.size(); ++s) {
                if ((*cols[s])[k].timestamp != t) {
                    throw ContractError("signals of message " + msg.name + " are not sampled together");
                }
                values.emplace(msg.signals[s].name, (*cols[s])[k].value);
            }
            CanFrame f;
            f.can_id = msg.message_id;
            f.timestamp = t;
            f.dlc = static_cast<std::uint8_t>(msg.dlc);
            f.payload = encode_signals(values, msg);
            frames.push_back(f);
        }
    }
    std::stable_sort(frames.begin(), frames.end(),
                     [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
    return frames;
}

SampleGrid resample_series(const SignalSeries& series, double rate_hz) {
    if (!(rate_hz > 0.0)) throw ConfigError("rate_hz must be positive");
    SampleGrid grid;
    grid.names = series.names;
    grid.rate_hz = rate_hz;
    grid.start_time = series.start_time;
    const double span = series.end_time - series.start_time;
    const auto rows = static_cast<Eigen::Index>(std::floor(span * rate_hz + 1e-9));
    if (rows <= 0) throw ResampleError("series spans no grid points");
    grid.values.resize(rows, static_cast<Eigen::Index>(series.signal_count()));

    for (std::size_t s = 0; s < series.signal_count(); ++s) {
        const auto& obs = series.observations[s];
        std::size_t next = 0;
        double current = 0.0;
        bool seen = false;
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double t = grid.time_at(r);
            while (next < obs.size() && obs[next].timestamp <= t) {
                current = obs[next].value;
                seen = true;
                ++next;
            }
            if (!seen) {
                throw ResampleError("signal " + series.names[s] + " has no observation at or before t=" +
                                    std::to_string(t));
            }
            grid.values(r, static_cast<Eigen::Index>(s)) = current;
        }
    }
    return grid;
}

SignalSeries series_from_grid(const SampleGrid& grid) {
    SignalSeries series;
    series.names = grid.names;
    series.start_time = grid.start_time;
    series.end_time = grid.start_time + grid.duration();
    series.observations.resize(grid.names.size());
    for (Eigen::Index c = 0; c < grid.values.cols(); ++c) {
        auto& obs = series.observations[static_cast<std::size_t>(c)];
        obs.reserve(static_cast<std::size_t>(grid.values.rows()));
        for (Eigen::Index r = 0; r < grid.values.rows(); ++r) {
            obs.push_back(Observation{grid.time_at(r), grid.values(r, c)});
        }
    }
    return series;
}

std::vector<SampleWindow> build_windows(const SampleGrid& grid, double window_s, double stride_s) {
    const auto steps = lattice_steps(window_s, grid.rate_hz, "window");
    const auto stride = lattice_steps(stride_s, grid.rate_hz, "stride");
    const auto rows = grid.values.rows();
    if (rows < steps) {
        throw ContractError("grid lasts " + std::to_string(grid.duration()) + " s, shorter than the " +
                            std::to_string(window_s) + " s window");
    }
    const auto count = (rows - steps) / stride + 1;
    std::vector<SampleWindow> windows;
    windows.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index k = 0; k < count; ++k) {
        SampleWindow w;
        w.x = grid.values.middleRows(k * stride, steps);
        w.start_time = grid.time_at(k * stride);
        w.step_s = 1.0 / grid.rate_hz;
        w.label = Label::Normal;
        windows.push_back(std::move(w));
    }
    return windows;
}

DatasetSplit split_dataset(std::vector<SampleWindow> samples, std::uint64_t seed) {
    if (samples.size() < 10) throw ContractError("splitting needs at least 10 samples");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));

    const std::size_t n_val = samples.size() / 10;
    const std::size_t n_test = samples.size() / 10;
    const std::size_t n_train = samples.size() - n_val - n_test;

    DatasetSplit split;
    split.split_seed = seed;
    split.train.reserve(n_train);
    split.validation.reserve(n_val);
    split.test.reserve(n_test);
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& w = samples[order[i]];
        if (i < n_train) {
            split.train.push_back(std::move(w));
        } else if (i < n_train + n_val) {
            split.validation.push_back(std::move(w));
        } else {
            split.test.push_back(std::move(w));
        }
    }
    return split;
}

SignalSeries ingest_decoded_csv(std::istream& in, const SignalCatalog& catalog,
                                std::vector<std::string>* warnings) {
    SignalSeries series;
    series.names = catalog.signal_names();
    series.observations.resize(series.names.size());
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < series.names.size(); ++i) column.emplace(series.names[i], i);

    std::string line;
    std::size_t line_no = 0;
    bool any = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto c1 = body.find(',');
        const auto c2 = c1 == std::string_view::npos ? c1 : body.find(',', c1 + 1);
        if (c2 == std::string_view::npos) {
            throw IngestError("line " + std::to_string(line_no) + ": expected timestamp,signal_name,value");
        }
        const auto ts = trim(body.substr(0, c1));
        const auto name = std::string(trim(body.substr(c1 + 1, c2 - c1 - 1)));
        const auto val = trim(body.substr(c2 + 1));
        if (line_no == 1 && ts == "timestamp") continue;
        double t = 0.0;
        double v = 0.0;
        const auto r1 = std::from_chars(ts.data(), ts.data() + ts.size(), t);
        const auto r2 = std::from_chars(val.data(), val.data() + val.size(), v);
        if (r1.ec != std::errc{} || r1.ptr != ts.data() + ts.size() || r2.ec != std::errc{} ||
            r2.ptr != val.data() + val.size()) {
            throw IngestError("line " + std::to_string(line_no) + ": bad number");
        }
        const auto it = column.find(name);
        if (it == column.end()) {
            throw IngestError("line " + std::to_string(line_no) + ": unknown signal " + name);
        }
        series.observations[it->second].push_back(Observation{t, v});
        if (!any) {
            series.start_time = t;
            series.end_time = t;
            any = true;
        }
        series.start_time = std::min(series.start_time, t);
        series.end_time = std::max(series.end_time, t);
    }

    for (std::size_t s = 0; s < series.observations.size(); ++s) {
        auto& obs = series.observations[s];
        std::stable_sort(obs.begin(), obs.end(),
                         [](const Observation& a, const Observation& b) { return a.timestamp < b.timestamp; });
        std::vector<Observation> unique;
        unique.reserve(obs.size());
        std::size_t dropped = 0;
        for (const auto& o : obs) {
            if (!unique.empty() && unique.back().timestamp == o.timestamp) {
                unique.back() = o;
                ++dropped;
            } else {
                unique.push_back(o);
            }
        }
        if (dropped > 0 && warnings != nullptr) {
            warnings->push_back("signal " + series.names[s] + ": " + std::to_string(dropped) +
                                " duplicate timestamps, kept the last value");
        }
        obs = std::move(unique);
    }
    return series;
}

SignalSeries ingest_decoded_csv(const std::string& path, const SignalCatalog& catalog,
                                std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open decoded trace " + path);
    return ingest_decoded_csv(in, catalog, warnings);
}

void write_decoded_csv(std::ostream& out, const std::vector<DecodedSample>& samples) {
    out << "timestamp,signal_name,value\n" << std::setprecision(17);
    for (const auto& s : samples) out << s.timestamp << ',' << s.signal << ',' << s.value << '\n';
}

void write_decoded_csv(std::ostream& out, const SignalSeries& series) {
    std::vector<DecodedSample> samples;
    for (std::size_t s = 0; s < series.signal_count(); ++s) {
        for (const auto& o : series.observations[s]) {
            samples.push_back(DecodedSample{o.timestamp, series.names[s], o.value});
        }
    }
    std::stable_sort(samples.begin(), samples.end(),
                     [](const DecodedSample& a, const DecodedSample& b) { return a.timestamp < b.timestamp; });
    write_decoded_csv(out, samples);
}

FeatureScaler::FeatureScaler(const SignalCatalog& catalog, const std::vector<std::string>& names)
    : min_(static_cast<Eigen::Index>(names.size())), span_(static_cast<Eigen::Index>(names.size())) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& s = catalog.signal(names[i]);
        const auto c = static_cast<Eigen::Index>(i);
        min_(c) = s.min_phys;
        span_(c) = s.max_phys > s.min_phys ? s.max_phys - s.min_phys : 1.0;
    }
}

Eigen::MatrixXd FeatureScaler::normalize(const Eigen::MatrixXd& physical) const {
    if (physical.cols() != min_.size()) throw ContractError("signal count does not match the scaler");
    return ((physical.rowwise() - min_).array().rowwise() / span_.array()).matrix();
}

Eigen::MatrixXd FeatureScaler::denormalize(const Eigen::MatrixXd& normalized) const {
    if (normalized.cols() != min_.size()) throw ContractError("signal count does not match the scaler");
    return ((normalized.array().rowwise() * span_.array()).matrix().rowwise() + min_);
}

SampleWindow FeatureScaler::normalize(const SampleWindow& window) const {
    SampleWindow out = window;
    out.x = normalize(window.x);
    return out;
}

std::vector<SampleWindow> FeatureScaler::normalize(const std::vector<SampleWindow>& windows) const {
    std::vector<SampleWindow> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(normalize(w));
    return out;
}

double FeatureScaler::to_normalized_epsilon(std::size_t signal, double physical_epsilon) const {
    if (signal >= static_cast<std::size_t>(span_.size())) throw ContractError("signal index out of range");
    return physical_epsilon / span_(static_cast<Eigen::Index>(signal));
}

void save_windows(const std::string& path, const WindowFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const auto signals = static_cast<std::uint32_t>(file.names.size());
    const auto steps = file.windows.empty() ? 0u : static_cast<std::uint32_t>(file.windows.front().timesteps());
    out.write(kWindowMagic.data(), kWindowMagic.size());
    detail::put_u32(out, kWindowVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(file.units));
    detail::put_u32(out, signals);
    detail::put_u32(out, steps);
    detail::put_u64(out, file.windows.size());
    for (const auto& n : file.names) detail::put_string(out, n);
    for (const auto& w : file.windows) {
        if (w.timesteps() != steps || w.signals() != signals) {
            throw ContractError("windows in one file must share their shape");
        }
        detail::put_f64(out, w.start_time);
        detail::put_f64(out, w.step_s);
        detail::put_u32(out, static_cast<std::uint32_t>(w.label));
        detail::put_i32(out, w.attack_begin);
        detail::put_i32(out, w.attack_length);
        for (Eigen::Index r = 0; r < w.x.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.x.cols(); ++c) detail::put_f64(out, w.x(r, c));
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

WindowFile load_windows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    detail::expect_magic(in, kWindowMagic, "window dataset");
    const auto version = detail::get_u32(in);
    if (version != kWindowVersion) throw IoError("unsupported window file version " + std::to_string(version));
    WindowFile file;
    const auto units = detail::get_u32(in);
    if (units > 1) throw IoError("bad units tag in " + path);
    file.units = static_cast<Units>(units);
    const auto signals = detail::get_u32(in);
    const auto steps = detail::get_u32(in);
    const auto count = detail::get_u64(in);
    for (std::uint32_t i = 0; i < signals; ++i) file.names.push_back(detail::get_string(in));
    file.windows.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t k = 0; k < count; ++k) {
        SampleWindow w;
        w.start_time = detail::get_f64(in);
        w.step_s = detail::get_f64(in);
        const auto label = detail::get_u32(in);
        if (label > 1) throw IoError("bad label in " + path);
        w.label = static_cast<Label>(label);
        w.attack_begin = detail::get_i32(in);
        w.attack_length = detail::get_i32(in);
        w.x.resize(steps, signals);
        for (Eigen::Index r = 0; r < w.x.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.x.cols(); ++c) w.x(r, c) = detail::get_f64(in);
        }
        file.windows.push_back(std::move(w));
    }
    return file;
}

}  // namespace canadv
