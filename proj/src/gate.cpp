#include "dance/gate.hpp"

#include "dance/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dance {

void GateConfig::validate() const {
    if (!(tau > 0.0)) throw ValidationError("gate tau must be > 0");
    if (hidden < 1) throw ValidationError("gate hidden width must be >= 1");
    if (k_min < 1) throw ValidationError("gate k_min must be >= 1");
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (double& v : w.data) v = rng.normal(0.0, stddev);
    return w;
}

} // namespace

SelectGate::SelectGate(const SuperNetConfig& net_cfg, GateConfig cfg, RngStream& init)
    : cfg_(cfg) {
    cfg_.validate();
    repr_.proj_w = Parameter(glorot(2 * net_cfg.input_dim, cfg_.embed_dim, init));
    repr_.proj_b = Parameter(Tensor::zeros({1, cfg_.embed_dim}));
    const std::vector<std::size_t> widths = net_cfg.layer_widths();
    layers_.resize(widths.size());
    for (std::size_t l = 0; l < widths.size(); ++l) {
        const std::size_t w = widths[l];
        const std::size_t comb_in = cfg_.embed_dim + 4 * w;
        layers_[l].combine_w = Parameter(glorot(comb_in, cfg_.hidden, init));
        layers_[l].combine_b = Parameter(Tensor::zeros({1, cfg_.hidden}));
        layers_[l].mlp1_w = Parameter(glorot(cfg_.hidden, cfg_.hidden, init));
        layers_[l].mlp1_b = Parameter(Tensor::zeros({1, cfg_.hidden}));
        layers_[l].mlp2_w = Parameter(glorot(cfg_.hidden, w, init));
        layers_[l].mlp2_b = Parameter(Tensor::zeros({1, w}));
    }
}

void SelectGate::set_temperature(double tau) {
    if (!(tau > 0.0)) throw ValidationError("gate tau must be > 0");
    cfg_.tau = tau;
}

std::vector<Parameter*> SelectGate::gate_parameters() {
    std::vector<Parameter*> out;
    for (LayerGateParams& lp : layers_) {
        out.push_back(&lp.combine_w);
        out.push_back(&lp.combine_b);
        out.push_back(&lp.mlp1_w);
        out.push_back(&lp.mlp1_b);
        out.push_back(&lp.mlp2_w);
        out.push_back(&lp.mlp2_b);
    }
    return out;
}

std::vector<Parameter*> SelectGate::repr_parameters() {
    return {&repr_.proj_w, &repr_.proj_b};
}

Var SelectGate::batch_repr(Tape& tape, Var batch) {
    const Tensor& b = tape.value(batch);
    if (b.rows() < 2) {
        throw InputError("batch_repr: need at least 2 batch rows, got " +
                         std::to_string(b.rows()));
    }
    Var mean = tape.mean_rows(batch);
    Var stddev = tape.std_rows(batch);
    Var stats = tape.concat_cols(mean, stddev);
    return tape.add_row(tape.matmul(stats, tape.param(repr_.proj_w)), tape.param(repr_.proj_b));
}

Var SelectGate::gate_logits(Tape& tape, Var embedding, const Tensor& layer_summary,
                            std::size_t l) {
    LayerGateParams& lp = layers_.at(l);
    const std::size_t w = lp.mlp2_w.value.cols();
    if (layer_summary.rows() != w || layer_summary.cols() != 4) {
        throw DimensionError("gate_logits: layer summary " + layer_summary.shape_str() +
                             " does not match width " + std::to_string(w));
    }
    Tensor flat = Tensor::zeros({1, 4 * w});
    std::copy(layer_summary.data.begin(), layer_summary.data.end(), flat.data.begin());
    Var combined = tape.concat_cols(embedding, tape.leaf(std::move(flat)));
    Var comb =
        tape.add_row(tape.matmul(combined, tape.param(lp.combine_w)), tape.param(lp.combine_b));
    Var h1 = tape.relu(tape.add_row(tape.matmul(comb, tape.param(lp.mlp1_w)),
                                    tape.param(lp.mlp1_b)));
    return tape.add_row(tape.matmul(h1, tape.param(lp.mlp2_w)), tape.param(lp.mlp2_b));
}

Var gumbel_soft(Tape& tape, Var logits, double tau, RngStream& rng) {
    if (!(tau > 0.0)) throw RangeError("gumbel_soft: tau must be > 0");
    const Tensor& g = tape.value(logits);
    Tensor noise = Tensor::zeros(g.shape);
    for (double& v : noise.data) v = rng.gumbel();
    Var shifted = tape.add_const(logits, noise);
    return tape.softmax_rows(tape.scale(shifted, 1.0 / tau));
}

Var gumbel_soft_deterministic(Tape& tape, Var logits, double tau) {
    if (!(tau > 0.0)) throw RangeError("gumbel_soft: tau must be > 0");
    return tape.softmax_rows(tape.scale(logits, 1.0 / tau));
}

Var sampling_probs(Tape& tape, Var soft, Var score) {
    const Tensor& s = tape.value(score);
    for (double v : s.data) {
        if (!std::isfinite(v) || v < 0.0) {
            throw RangeError("sampling_probs: score values must be finite and non-negative");
        }
    }
    return tape.softmax_rows(tape.mul(soft, score));
}

namespace {

// Indices of the k largest keys, ties broken by lowest index.
std::vector<std::size_t> top_k_indices(const std::vector<double>& keys, std::size_t k) {
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&keys](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
    order.resize(k);
    return order;
}

} // namespace

ExactKSample bernoulli_sample_exact_k(const std::vector<double>& probs, std::size_t layer,
                                      std::size_t k, RngStream& rng) {
    const std::size_t w = probs.size();
    if (k < 1 || k > w) {
        throw RangeError("bernoulli_sample_exact_k: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(w) + "]");
    }
    std::size_t positive = 0;
    for (double p : probs) {
        if (p > 0.0) ++positive;
    }
    if (positive < k) {
        throw RangeError("bernoulli_sample_exact_k: only " + std::to_string(positive) +
                         " positive probabilities for k=" + std::to_string(k));
    }
    std::vector<double> keys(w);
    for (std::size_t j = 0; j < w; ++j) {
        const double lp = probs[j] > 0.0 ? std::log(probs[j])
                                         : -std::numeric_limits<double>::infinity();
        const double noise = rng.gumbel();
        keys[j] = lp + noise;
    }
    const std::vector<std::size_t> chosen = top_k_indices(keys, k);
    std::vector<std::uint8_t> bits(w, 0);
    double log_prob = 0.0;
    for (std::size_t j : chosen) {
        bits[j] = 1;
        log_prob += std::log(probs[j]);
    }
    ExactKSample out;
    out.mask = LayerMask(layer, std::move(bits));
    out.log_prob = log_prob;
    return out;
}

LayerMask top_k_mask(const std::vector<double>& probs, std::size_t layer, std::size_t k) {
    const std::size_t w = probs.size();
    if (k < 1 || k > w) {
        throw RangeError("top_k_mask: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(w) + "]");
    }
    const std::vector<std::size_t> chosen = top_k_indices(probs, k);
    std::vector<std::uint8_t> bits(w, 0);
    for (std::size_t j : chosen) bits[j] = 1;
    return LayerMask(layer, std::move(bits));
}

GateOutput select_gate_layer(Tape& tape, SelectGate& gate, Var embedding,
                             const Tensor& layer_summary, std::size_t l, double constraint,
                             Var score, RngStream& gate_noise, RngStream& sampling,
                             bool training) {
    const std::size_t w = layer_summary.rows();
    std::size_t k = retain_count_for(constraint, w);
    k = std::max(k, gate.config().k_min);

    GateOutput out;
    Var logits = gate.gate_logits(tape, embedding, layer_summary, l);
    Var soft = training ? gumbel_soft(tape, logits, gate.config().tau, gate_noise)
                        : gumbel_soft_deterministic(tape, logits, gate.config().tau);
    out.probs_var = sampling_probs(tape, soft, score);

    out.logits = tape.value(logits).data;
    out.soft = tape.value(soft).data;
    out.probs = tape.value(out.probs_var).data;

    if (training) {
        ExactKSample sample = bernoulli_sample_exact_k(out.probs, l, k, sampling);
        out.mask = std::move(sample.mask);
        out.log_prob = sample.log_prob;
    } else {
        out.mask = top_k_mask(out.probs, l, k);
        out.log_prob = 0.0;
        for (std::size_t j = 0; j < w; ++j)
            if (out.mask.bits[j]) out.log_prob += std::log(out.probs[j]);
    }

    Tensor hard = Tensor::zeros({1, w});
    for (std::size_t j = 0; j < w; ++j) hard.data[j] = static_cast<double>(out.mask.bits[j]);
    if (training && gate.config().straight_through) {
        out.mask_var = tape.straight_through(out.probs_var, std::move(hard));
    } else {
        out.mask_var = tape.leaf(std::move(hard));
    }
    return out;
}

} // namespace dance
