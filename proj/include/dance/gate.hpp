#pragma once

#include "dance/rng.hpp"
#include "dance/scoring.hpp"
#include "dance/supernet.hpp"
#include "dance/tape.hpp"

#include <cstdint>
#include <vector>

namespace dance {

struct GateConfig {
    double tau = 0.5;                  // Gumbel-Softmax temperature
    std::size_t hidden = 32;           // gate MLP hidden width
    bool straight_through = true;
    std::size_t k_min = 1;
    std::size_t embed_dim = 16;        // batch embedding size

    void validate() const;
};

// Learnable SelectGate parameters for one layer: the combine projection into
// the gate MLP, and the two MLP layers with ReLU between. The batch
// representation projection is shared across layers and optimized as its own
// group.
struct LayerGateParams {
    Parameter combine_w;   // (embed + 4W) x hidden
    Parameter combine_b;   // 1 x hidden
    Parameter mlp1_w;      // hidden x hidden
    Parameter mlp1_b;      // 1 x hidden
    Parameter mlp2_w;      // hidden x W
    Parameter mlp2_b;      // 1 x W
};

struct BatchReprParams {
    Parameter proj_w;      // 2*input_dim x embed
    Parameter proj_b;      // 1 x embed
};

class SelectGate {
public:
    SelectGate() = default;
    SelectGate(const SuperNetConfig& net_cfg, GateConfig cfg, RngStream& init);

    const GateConfig& config() const { return cfg_; }
    void set_temperature(double tau);
    BatchReprParams& repr_params() { return repr_; }
    LayerGateParams& layer_params(std::size_t l) { return layers_[l]; }
    std::size_t num_layers() const { return layers_.size(); }

    std::vector<Parameter*> gate_parameters();        // per-layer params
    std::vector<Parameter*> repr_parameters();        // shared projection

    // Projection of [per-feature mean ⊕ per-feature std] of the batch.
    Var batch_repr(Tape& tape, Var batch);

    // Combine(embedding, F_l) -> two-layer ReLU MLP -> length-W logits.
    Var gate_logits(Tape& tape, Var embedding, const Tensor& layer_summary, std::size_t l);

private:
    GateConfig cfg_;
    BatchReprParams repr_;
    std::vector<LayerGateParams> layers_;
};

// softmax((g + eps) / tau) with standard Gumbel noise per entry.
Var gumbel_soft(Tape& tape, Var logits, double tau, RngStream& rng);
// Deployment variant: eps = 0.
Var gumbel_soft_deterministic(Tape& tape, Var logits, double tau);

// p = softmax(g_tilde ⊙ score).
Var sampling_probs(Tape& tape, Var soft, Var score);

// Gumbel-top-k on ln p: perturb each ln p_i with i.i.d. Gumbel noise and keep
// the k largest (ties by lowest index). Returns the mask and the log-score
// sum_{i in mask} ln p_i.
struct ExactKSample {
    LayerMask mask;
    double log_prob = 0.0;
};
ExactKSample bernoulli_sample_exact_k(const std::vector<double>& probs, std::size_t layer,
                                      std::size_t k, RngStream& rng);

// Noise-free deployment selection: top-k of p directly.
LayerMask top_k_mask(const std::vector<double>& probs, std::size_t layer, std::size_t k);

// Output of one select_gate invocation for one layer.
struct GateOutput {
    std::vector<double> logits;
    std::vector<double> soft;        // g_tilde
    std::vector<double> probs;       // p
    LayerMask mask;
    double log_prob = 0.0;
    Var probs_var;                   // tape handle for loss terms
    Var mask_var;                    // straight-through mask (training mode)
};

// Full composition for one layer given precomputed embedding and score.
// In training mode the returned mask_var carries straight-through gradients;
// in deployment mode noise is off and selection is deterministic top-k.
GateOutput select_gate_layer(Tape& tape, SelectGate& gate, Var embedding,
                             const Tensor& layer_summary, std::size_t l, double constraint,
                             Var score, RngStream& gate_noise, RngStream& sampling,
                             bool training);

} // namespace dance
