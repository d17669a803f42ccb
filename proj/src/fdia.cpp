#include "canadv/fdia.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "canadv/error.hpp"

namespace canadv {

void FdiaConfig::validate() const {
    std::vector<std::string> problems;
    if (!(attack_span_s > 0.0 && attack_span_s <= 10.0)) problems.emplace_back("fdia.attack_span_s must be in (0,10]");
    if (!(fraction_attacked > 0.0 && fraction_attacked <= 1.0)) {
        problems.emplace_back("fdia.fraction_attacked must be in (0,1]");
    }
    if (!problems.empty()) throw ConfigError(problems);
}

int attack_span_steps(const SampleWindow& window, double attack_span_s) {
    const auto steps = static_cast<int>(std::lround(attack_span_s / window.step_s));
    return std::clamp(steps, 1, static_cast<int>(window.timesteps()));
}

SampleWindow inject_fdia(const SampleWindow& window, const std::vector<std::string>& names,
                         const SignalCatalog& catalog, const FdiaConfig& cfg, Rng& rng) {
    if (window.label != Label::Normal) throw ContractError("window is already labeled Attack");
    if (static_cast<std::size_t>(window.signals()) != names.size()) {
        throw ContractError("window columns do not match the signal names");
    }
    std::vector<Eigen::Index> columns;
    if (cfg.target_signals.empty()) {
        columns.resize(names.size());
        std::iota(columns.begin(), columns.end(), 0);
    } else {
        for (const auto& target : cfg.target_signals) {
            const auto it = std::find(names.begin(), names.end(), target);
            if (it == names.end() || catalog.find_signal(target) == nullptr) {
                throw ContractError("target signal " + target + " is not part of the window");
            }
            columns.push_back(static_cast<Eigen::Index>(it - names.begin()));
        }
    }

    const int length = attack_span_steps(window, cfg.attack_span_s);
    const int slack = static_cast<int>(window.timesteps()) - length;
    const int begin = static_cast<int>(rng.index(static_cast<std::size_t>(slack) + 1));

    SampleWindow out = window;
    for (int t = begin; t < begin + length; ++t) {
        for (const auto c : columns) {
            const auto& sig = catalog.signal(names[static_cast<std::size_t>(c)]);
            const double x = window.x(t, c);
            const double delta = rng.uniform(sig.min_phys - x, sig.max_phys - x);
            // Rounding in x + delta may land an ulp outside the range.
            out.x(t, c) = std::clamp(x + delta, sig.min_phys, sig.max_phys);
        }
    }
    out.label = Label::Attack;
    out.attack_begin = begin;
    out.attack_length = length;
    return out;
}

std::vector<SampleWindow> craft_attack_dataset(const std::vector<SampleWindow>& samples,
                                               const std::vector<std::string>& names,
                                               const SignalCatalog& catalog, const FdiaConfig& cfg,
                                               Rng& rng) {
    cfg.validate();
    for (const auto& w : samples) {
        if (w.label != Label::Normal) throw ContractError("craft_attack_dataset expects Normal windows");
    }
    const auto n = samples.size();
    const auto attacked = static_cast<std::size_t>(std::llround(cfg.fraction_attacked * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<bool> selected(n, false);
    for (std::size_t i = 0; i < attacked; ++i) selected[order[i]] = true;

    std::vector<SampleWindow> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (selected[i]) {
            Rng stream = rng.fork();
            out.push_back(inject_fdia(samples[i], names, catalog, cfg, stream));
        } else {
            out.push_back(samples[i]);
        }
    }
    return out;
}

}  // namespace canadv
