#pragma once

#include "dance/rng.hpp"
#include "dance/tape.hpp"
#include "dance/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dance {

struct SuperNetConfig {
    std::size_t input_dim = 2;
    std::size_t num_classes = 2;
    std::size_t num_layers = 2;          // hidden layers
    std::size_t width = 64;              // uniform max width
    std::vector<std::size_t> widths;     // optional per-layer override

    std::vector<std::size_t> layer_widths() const;
    void validate() const;
};

// Binary feature-dimension selection for one layer; always carries exactly
// `retained` set bits.
struct LayerMask {
    std::size_t layer = 0;
    std::vector<std::uint8_t> bits;
    std::size_t retained = 0;

    LayerMask() = default;
    LayerMask(std::size_t layer, std::vector<std::uint8_t> bits);
    static LayerMask all_ones(std::size_t layer, std::size_t width);

    std::size_t width() const { return bits.size(); }
    void validate() const;
    std::string to_hex() const;
    static LayerMask from_hex(std::size_t layer, std::size_t width, const std::string& hex);
};

// Per-layer retain fractions; counts derive as k = max(1, round(c * W)).
struct ResourceConstraint {
    std::vector<double> fractions;

    static ResourceConstraint uniform(double fraction, std::size_t num_layers);
    std::size_t retain_count(std::size_t layer, std::size_t width) const;
    void validate() const;
};

std::size_t retain_count_for(double fraction, std::size_t width);

// Stack of wide dense layers with shared weights; every sampled architecture
// is a per-layer column subset of this net.
class SuperNet {
public:
    SuperNet() = default;
    SuperNet(SuperNetConfig cfg, RngStream& init);

    const SuperNetConfig& config() const { return cfg_; }
    std::size_t num_layers() const { return cfg_.num_layers; }
    std::size_t layer_width(std::size_t l) const { return widths_[l]; }

    Parameter& layer_weight(std::size_t l) { return layer_w_[l]; }
    Parameter& layer_bias(std::size_t l) { return layer_b_[l]; }
    Parameter& head_weight() { return head_w_; }
    Parameter& head_bias() { return head_b_; }
    const Parameter& layer_weight(std::size_t l) const { return layer_w_[l]; }
    const Parameter& layer_bias(std::size_t l) const { return layer_b_[l]; }
    const Parameter& head_weight() const { return head_w_; }
    const Parameter& head_bias() const { return head_b_; }

    std::vector<Parameter*> parameters();

    struct PlainForward {
        Tensor logits;
        std::vector<Tensor> activations;   // post-activation, post-mask, per hidden layer
    };

    // No-tape forward; masks may be empty (no masking). Bit-identical to the
    // tape forward for the same inputs.
    PlainForward forward_plain(const Tensor& batch,
                               const std::vector<LayerMask>* masks = nullptr) const;

    // Raw-bit variant used by stage-1 path dropping (no cardinality rule).
    PlainForward forward_bits(const Tensor& batch,
                              const std::vector<std::vector<std::uint8_t>>& bits) const;

    struct TapeForward {
        Var logits;
        std::vector<Var> activations;
    };

    // Tape forward with an externally supplied mask Var per hidden layer
    // (straight-through masks in training); pass empty for unmasked.
    TapeForward forward_tape(Tape& tape, Var batch, const std::vector<Var>& mask_rows);

    std::uint64_t parameter_checksum() const;

private:
    SuperNetConfig cfg_;
    std::vector<std::size_t> widths_;
    std::vector<Parameter> layer_w_;
    std::vector<Parameter> layer_b_;
    Parameter head_w_;
    Parameter head_b_;
};

// Compact network sliced out of a SuperNet along retained dimensions.
struct SubNet {
    std::vector<Tensor> weights;           // k_{l-1} x k_l
    std::vector<Tensor> biases;            // 1 x k_l
    Tensor head_weight;                    // k_L x classes
    Tensor head_bias;                      // 1 x classes
    std::vector<LayerMask> masks;
    std::uint64_t supernet_checksum = 0;
    std::vector<double> constraint;
    std::uint64_t seed = 0;

    Tensor forward(const Tensor& batch) const;
};

void validate_masks(const SuperNet& net, const std::vector<LayerMask>& masks);

SuperNet::PlainForward forward_masked(const SuperNet& net, const std::vector<LayerMask>& masks,
                                      const Tensor& batch);

SubNet extract_subnet(const SuperNet& net, const std::vector<LayerMask>& masks);

// Writes fine-tuned SubNet weights back into the retained SuperNet slices.
void scatter_subnet(SuperNet& net, const SubNet& sub);

// Exact retained parameter count (weight (i,j) needs both endpoints kept).
std::size_t count_params(const SuperNet& net, const std::vector<LayerMask>* masks = nullptr);
// Per hidden layer weight counts only (no biases, no head).
std::vector<std::size_t> layer_weight_counts(const SuperNet& net,
                                             const std::vector<LayerMask>* masks = nullptr);

// Multiply-add pairs: sum over layers of 2 * k_in * k_out, plus the head.
std::size_t count_flops(const SuperNet& net, const std::vector<LayerMask>* masks = nullptr);
std::vector<std::size_t> layer_flops(const SuperNet& net,
                                     const std::vector<LayerMask>* masks = nullptr);

// Per-dimension summary of a batch of activations: [mean, std, mean|x|,
// fraction active]. Shape [W x 4]; requires at least two rows.
Tensor layer_features(const Tensor& activations);

} // namespace dance
