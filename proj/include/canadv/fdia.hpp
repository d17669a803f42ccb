#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "canadv/can_codec.hpp"
#include "canadv/random.hpp"
#include "canadv/traffic.hpp"

namespace canadv {

struct FdiaConfig {
    double attack_span_s = 1.0;
    std::vector<std::string> target_signals;  // empty: every signal of the window
    std::uint64_t rng_seed = 0;
    double fraction_attacked = 0.5;

    void validate() const;
};

// False data injection. A contiguous span of attack_span_s seconds, placed
// uniformly so it stays inside the window, gets every targeted entry replaced by
// X + delta with delta ~ U(min_phys - X, max_phys - X), redrawn per timestep and
// signal. Works on physical-unit windows whose columns follow `names`.
SampleWindow inject_fdia(const SampleWindow& window, const std::vector<std::string>& names,
                         const SignalCatalog& catalog, const FdiaConfig& cfg, Rng& rng);

// Attacks round(fraction_attacked * n) windows chosen by a seeded shuffle; each
// attacked window draws from its own forked stream.
std::vector<SampleWindow> craft_attack_dataset(const std::vector<SampleWindow>& samples,
                                               const std::vector<std::string>& names,
                                               const SignalCatalog& catalog, const FdiaConfig& cfg,
                                               Rng& rng);

// Number of timesteps an attack span covers at the window's sampling step.
int attack_span_steps(const SampleWindow& window, double attack_span_s);

}  // namespace canadv
