#pragma once

#include "dance/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dance {

enum class BaselineKind { dance, score_based_pruning, random_mask };

std::string baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);

struct SweepSpec {
    std::vector<double> constraints = {0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<BaselineKind> baselines = {BaselineKind::dance,
                                           BaselineKind::score_based_pruning,
                                           BaselineKind::random_mask};
    bool fine_tune = false;

    void validate() const;
};

// 0.10, 0.12, ..., 0.50 (21 points).
std::vector<double> fine_grid();
// 0.5 ... 0.9 (5 points).
std::vector<double> coarse_grid();
// 0.9 down to 0.5, the ablation table layout.
std::vector<double> ablation_grid();

struct SweepCell {
    BaselineKind baseline = BaselineKind::dance;
    double constraint = 0.0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    std::size_t params = 0;
    std::size_t flops = 0;
    double wall_ms = 0.0;
};

struct SweepAggregate {
    BaselineKind baseline;
    double constraint;
    double mean_accuracy;
    double std_accuracy;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<SweepAggregate> aggregate() const;
    double mean_accuracy(BaselineKind kind, double constraint) const;
};

// Deterministic top-k per layer on the combined score, no gate, no noise.
std::vector<LayerMask> score_based_prune(const SuperNet& net,
                                         const std::vector<ImportanceState>& states,
                                         const ScoreWeights& weights, double constraint);

// Uniform over all k-subsets (Fisher-Yates prefix).
LayerMask random_mask(std::size_t width, std::size_t k, RngStream& rng, std::size_t layer = 0);

// Evaluates dance / score-based / random masks for every (constraint, seed)
// cell on a trained run state. The run state stays frozen; fine-tuning cells
// work on copies.
SweepResult sweep_constraints(const SweepSpec& spec, const RunState& trained,
                              const Dataset& data, const TrainConfig& cfg,
                              const ScoreWeights& sw);

void write_sweep_csv(const std::string& path, const SweepResult& result);

enum class AblationMode { all, only_static, only_dynamic, only_feature, only_corr };

std::string ablation_mode_name(AblationMode mode);

struct AblationSpec {
    std::vector<AblationMode> modes = {AblationMode::all, AblationMode::only_static,
                                       AblationMode::only_dynamic, AblationMode::only_feature,
                                       AblationMode::only_corr};
    std::vector<double> constraints = ablation_grid();
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

// Zeroes the other three weights; `all` keeps the configured weights.
ScoreWeights ablation_weights(const ScoreWeights& base, AblationMode mode);

struct AblationCell {
    AblationMode mode;
    double constraint;
    std::uint64_t seed;
    double accuracy;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    double mean_accuracy(AblationMode mode, double constraint) const;
};

// For each seed: one shared stage-1 pretrain, then an independent stage-2 run
// per mode, then deployment sampling at each constraint.
AblationResult ablation_run(const AblationSpec& spec, const SuperNetConfig& net_cfg,
                            const GateConfig& gate_cfg, const ScoreWeights& base_weights,
                            const TrainConfig& cfg, const DatasetSpec& data_spec);

void write_ablation_csv(const std::string& path, const AblationResult& result);

enum class SensitivityAxis { batch_size, alpha, lambda_corr, tau };

std::string sensitivity_axis_name(SensitivityAxis axis);
SensitivityAxis sensitivity_axis_from_name(const std::string& name);
std::vector<double> default_sensitivity_grid(SensitivityAxis axis);

struct SensitivityCell {
    double value;
    std::uint64_t seed;
    double accuracy;
    std::size_t params;
};

struct SensitivityResult {
    SensitivityAxis axis;
    std::vector<SensitivityCell> cells;
};

// Re-runs stage 2 per grid value (stage 1 shared per seed) and evaluates
// deployment sampling at the reference constraint.
SensitivityResult sensitivity_sweep(SensitivityAxis axis, const std::vector<double>& grid,
                                    const SuperNetConfig& net_cfg, const GateConfig& gate_cfg,
                                    const ScoreWeights& sw, const TrainConfig& cfg,
                                    const DatasetSpec& data_spec,
                                    const std::vector<std::uint64_t>& seeds,
                                    double reference_constraint = 0.5);

void write_sensitivity_csv(const std::string& path, const SensitivityResult& result);

} // namespace dance
