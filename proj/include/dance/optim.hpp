#pragma once

#include "dance/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dance {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam step over a set of parameters. Parameters whose
// gradient contains a non-finite value are skipped for that step and counted.
// Gradients are zeroed afterwards.
std::size_t adamw_step(const std::vector<Parameter*>& params, double lr,
                       const AdamWConfig& cfg);

// One-cycle schedule: cosine ramp floor -> peak over the warm-up fraction,
// cosine decay peak -> floor over the rest.
struct LrSchedule {
    double peak = 1e-3;
    std::int64_t total_steps = 1;
    double warmup_fraction = 0.30;
    double floor_fraction = 1.0 / 25.0;

    double at(std::int64_t step) const;
};

// A named parameter group with its own schedule and skip counter.
struct OptimizerGroup {
    std::string name;
    std::vector<Parameter*> params;
    LrSchedule schedule;
    AdamWConfig adamw;
    std::int64_t step_index = 0;
    std::uint64_t skipped_updates = 0;

    // Applies one AdamW step at the scheduled lr, then advances the schedule.
    void step();
    void zero_grads();
};

} // namespace dance
