#pragma once

#include "dance/rng.hpp"
#include "dance/tape.hpp"
#include "dance/tensor.hpp"

#include <cstdint>
#include <deque>
#include <vector>

namespace dance {

struct ScoreWeights {
    double lambda1 = 0.25;       // static
    double lambda2 = 0.25;       // dynamic
    double lambda3 = 0.25;       // feature
    double lambda4 = 0.25;       // correlation
    double lambda_noise = 0.1;   // Gumbel noise scale inside the dynamic gate
    double lambda_corr = 0.5;    // correlation penalty strength
    double alpha = 0.1;          // EMA coefficient

    void validate() const;
};

// Per-layer importance tracking: learnable static logits plus EMA trackers
// and the activation window feeding the correlation penalty.
class ImportanceState {
public:
    ImportanceState() = default;
    ImportanceState(std::size_t layer, std::size_t width, RngStream& init,
                    std::size_t buffer_batches = 4);

    std::size_t layer() const { return layer_; }
    std::size_t width() const { return width_; }

    Parameter& static_logits() { return static_logits_; }
    const Parameter& static_logits() const { return static_logits_; }
    Parameter& fusion_weights() { return fusion_w_; }
    const Parameter& fusion_weights() const { return fusion_w_; }

    const std::vector<double>& dynamic_importance() const { return dynamic_; }
    const std::vector<double>& feature_importance() const { return feature_; }
    std::int64_t step_count() const { return step_; }
    std::uint64_t skipped_updates() const { return skipped_; }

    // L1 movement of the trackers in their most recent update, feeding the
    // stability loss term.
    double last_update_l1() const { return last_delta_l1_; }

    // sigma(theta_c); numeric view.
    std::vector<double> static_importance() const;
    // Same, on tape, so theta_c receives gradients through the score.
    Var static_importance_var(Tape& tape);

    // fusion(F_l): shared 4 -> 1 projection applied per dimension.
    std::vector<double> fuse(const Tensor& layer_summary) const;

    // g_t = sigma(fusion(F_l) + theta_c + lambda_noise * eps) per batch row,
    // then the EMA I <- (1-alpha) I + alpha E_B[g_t]. Skips on non-finite
    // inputs.
    void dynamic_update(const Tensor& layer_summary, std::size_t batch_rows,
                        const ScoreWeights& w, RngStream& noise);

    // s_t = softmax(E_B[f_t]); EMA keeps the distribution normalized.
    void feature_update(const Tensor& batch_features, const ScoreWeights& w);

    void push_activations(const Tensor& activations);
    bool buffer_ready() const;
    std::size_t buffered_rows() const;

    // Per-dimension 1 - lambda_corr * mean_{j != i} |R_ij| over the buffered
    // window; zero-variance dimensions correlate with nothing.
    std::vector<double> correlation_penalty(const ScoreWeights& w) const;
    // Scalar version (mean of the per-dimension row means of |R|), used by
    // the stage-2 correlation loss term.
    double mean_abs_correlation() const;

    // Serialization access.
    std::vector<double>& dynamic_mut() { return dynamic_; }
    std::vector<double>& feature_mut() { return feature_; }
    std::deque<Tensor>& buffer_mut() { return buffer_; }
    const std::deque<Tensor>& buffer() const { return buffer_; }
    std::int64_t& step_mut() { return step_; }
    double& last_delta_mut() { return last_delta_l1_; }
    std::size_t buffer_capacity() const { return buffer_batches_; }

private:
    std::size_t layer_ = 0;
    std::size_t width_ = 0;
    std::size_t buffer_batches_ = 4;
    Parameter static_logits_;   // theta_c, length W
    Parameter fusion_w_;        // 1 x 4, zero-initialized
    std::vector<double> dynamic_;
    std::vector<double> feature_;
    std::deque<Tensor> buffer_;
    std::int64_t step_ = 0;
    std::uint64_t skipped_ = 0;
    double last_delta_l1_ = 0.0;
};

// The combined Score(A_l) with its component breakdown.
struct ScoreVector {
    std::size_t layer = 0;
    std::vector<double> values;
    std::vector<double> stat;
    std::vector<double> dyn;
    std::vector<double> feat;
    std::vector<double> corr;
};

ScoreVector combined_score(const ImportanceState& state, const ScoreWeights& weights);

// Tape expression of the combined score: the static term is differentiable
// through theta_c, the tracker terms enter as constants.
Var combined_score_var(Tape& tape, ImportanceState& state, const ScoreWeights& weights);

} // namespace dance
