#pragma once

#include "dance/data.hpp"
#include "dance/evalbench.hpp"
#include "dance/gate.hpp"
#include "dance/scoring.hpp"
#include "dance/supernet.hpp"
#include "dance/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dance {

// Whole-experiment configuration behind the flat dotted-key config file
// (e.g. `gate.tau = 0.5`). Unknown keys are rejected; values outside the
// declared grids load with a warning.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    DatasetSpec data;
    std::size_t net_layers = 3;
    std::size_t net_width = 32;
    std::vector<std::size_t> net_widths;       // optional per-layer override
    GateConfig gate;
    ScoreWeights score;
    std::size_t score_buffer_batches = 4;
    TrainConfig train;
    SweepSpec sweep;
    AblationSpec ablate;
    std::vector<std::uint64_t> sensitivity_seeds = {1, 2, 3, 4, 5};
    double sensitivity_constraint = 0.5;
    bool metrics_wall_clock = true;

    std::vector<std::string> warnings;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_text(const std::string& text);
    void apply(const std::string& key, const std::string& value);
    void validate() const;

    // Canonical serialization: every key, sorted, one per line. Also the
    // input to the config hash.
    std::string to_text() const;
    std::uint64_t hash() const;

    SuperNetConfig supernet_config(std::size_t input_dim, std::size_t classes) const;
    std::string run_id() const;
};

std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);

} // namespace dance
