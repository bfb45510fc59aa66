#pragma once

#include "dance/data.hpp"
#include "dance/gate.hpp"
#include "dance/metrics.hpp"
#include "dance/scoring.hpp"
#include "dance/supernet.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dance {

struct TrainConfig {
    std::size_t stage1_epochs = 100;
    std::size_t stage2_epochs = 100;
    std::size_t stage3_epochs = 20;
    std::size_t t_samples = 4;               // architectures per batch
    std::size_t batch_size = 32;
    double lr_gates = 0.001;
    double lr_batch_repr = 0.0005;
    double lr_backbone = 0.001;
    std::vector<double> constraint_grid = {0.3, 0.4, 0.5};
    std::size_t patience = 15;
    double w_sparsity = 0.1;                 // ramped linearly over stage-2 progress
    double w_diversity = 0.01;
    double w_corr = 0.05;
    double w_stability = 0.01;
    bool path_drop = true;
    double path_drop_final_keep = 0.7;
    bool self_distill = false;
    double self_distill_weight = 0.1;
    bool fix_constraint = false;
    double fixed_constraint = 0.5;
    bool log_prob_feedback = false;          // optional score-function term
    double w_feedback = 0.1;

    void validate() const;
};

struct TrainState {
    std::uint64_t epoch = 0;                 // completed epochs in current stage
    std::uint64_t global_step = 0;
    double best_val = -1.0;
    std::uint64_t since_improve = 0;
    double feedback_baseline = 0.0;          // running task-loss baseline
};

// Everything a run owns and checkpoints: net, gate, importance trackers (plus
// the gate-detached baseline set), rng streams, progress.
struct RunState {
    SuperNetConfig net_cfg;
    GateConfig gate_cfg;
    SuperNet net;
    SelectGate gate;
    std::vector<ImportanceState> states;
    std::vector<ImportanceState> baseline_states;
    RngSet rng;
    TrainState progress;
    int completed_stage = 0;
};

RunState init_run_state(const SuperNetConfig& net_cfg, const GateConfig& gate_cfg,
                        std::uint64_t seed, std::size_t buffer_batches = 4);

// Composite stage-2 loss. The breakdown stores the weighted contribution of
// each named term so that total always reconstructs as task + sum.
Var total_loss_var(Tape& tape, Var task, const std::vector<GateOutput>& layer_outputs,
                   const std::vector<double>& constraints,
                   const std::vector<ImportanceState>& states, const TrainConfig& cfg,
                   double progress, LossBreakdown* breakdown);

// Deterministic architecture derivation for a deployment batch: noise off,
// top-k on p_l per layer.
std::vector<LayerMask> deployment_masks(RunState& rs, const ScoreWeights& sw, const Tensor& probe,
                                        double constraint);

// Stage 1: SuperNet pre-training with progressive path dropping; the gate
// stays frozen. Returns the number of epochs actually run.
std::size_t stage1_pretrain(RunState& rs, const Dataset& data, const TrainConfig& cfg,
                            MetricsSink* sink, const std::string& run_id);

// Stage 2: dual-loop distribution-guided learning. halt_after_epoch > 0 stops
// early with consistent state (resume point); pass 0/negative to disable.
std::size_t stage2_distribution_learning(RunState& rs, const Dataset& data,
                                         const TrainConfig& cfg, const ScoreWeights& sw,
                                         MetricsSink* sink, const std::string& run_id,
                                         long halt_after_epoch = -1);

struct Stage3Result {
    SubNet subnet;
    std::vector<LayerMask> masks;
    double pre_finetune_accuracy = 0.0;
    double final_accuracy = 0.0;
};

// Stage 3: deployment-mode extraction and task-only fine-tuning. The tuned
// weights are scattered back into rs.net so checkpoint + card reproduce the
// SubNet exactly.
Stage3Result stage3_finetune(RunState& rs, const Dataset& data, double constraint,
                             const TrainConfig& cfg, const ScoreWeights& sw, MetricsSink* sink,
                             const std::string& run_id);

// Top-1 accuracy of the (optionally masked) net on a split.
double evaluate_accuracy(const SuperNet& net, const std::vector<LayerMask>* masks,
                         const Split& split);
double evaluate_accuracy(const SubNet& sub, const Split& split);

} // namespace dance
