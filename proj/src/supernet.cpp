#include "dance/supernet.hpp"

#include "dance/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dance {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_add(std::uint64_t& h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    // He-style scaling for the ReLU stack.
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (double& v : w.data) v = rng.normal(0.0, stddev);
    return w;
}

} // namespace

std::vector<std::size_t> SuperNetConfig::layer_widths() const {
    if (!widths.empty()) return widths;
    return std::vector<std::size_t>(num_layers, width);
}

void SuperNetConfig::validate() const {
    if (num_layers < 1) throw ValidationError("supernet: need at least one hidden layer");
    if (input_dim < 1) throw ValidationError("supernet: input_dim must be >= 1");
    if (num_classes < 2) throw ValidationError("supernet: num_classes must be >= 2");
    for (std::size_t w : layer_widths()) {
        if (w < 2) throw ValidationError("supernet: layer width must be >= 2");
    }
    if (!widths.empty() && widths.size() != num_layers) {
        throw ValidationError("supernet: widths list does not match num_layers");
    }
}

LayerMask::LayerMask(std::size_t layer_idx, std::vector<std::uint8_t> mask_bits)
    : layer(layer_idx), bits(std::move(mask_bits)) {
    retained = 0;
    for (std::uint8_t b : bits) {
        if (b > 1) throw RangeError("LayerMask: bits must be 0/1");
        retained += b;
    }
    validate();
}

LayerMask LayerMask::all_ones(std::size_t layer, std::size_t width) {
    return LayerMask(layer, std::vector<std::uint8_t>(width, 1));
}

void LayerMask::validate() const {
    std::size_t sum = 0;
    for (std::uint8_t b : bits) sum += b;
    if (sum != retained || retained < 1 || retained > bits.size()) {
        throw RangeError("LayerMask: retained count " + std::to_string(retained) +
                         " invalid for width " + std::to_string(bits.size()));
    }
}

std::string LayerMask::to_hex() const {
    // Dimension 0 is the most significant bit of the leftmost digit.
    std::string out;
    const std::size_t w = bits.size();
    for (std::size_t i = 0; i < w; i += 4) {
        unsigned nibble = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            nibble <<= 1;
            if (i + j < w && bits[i + j]) nibble |= 1u;
        }
        out.push_back("0123456789ABCDEF"[nibble]);
    }
    return out;
}

LayerMask LayerMask::from_hex(std::size_t layer, std::size_t width, const std::string& hex) {
    const std::size_t digits = (width + 3) / 4;
    if (hex.size() != digits) {
        throw FormatError("mask hex: expected " + std::to_string(digits) + " digits, got " +
                          std::to_string(hex.size()));
    }
    std::vector<std::uint8_t> bits(width, 0);
    for (std::size_t d = 0; d < digits; ++d) {
        const char c = hex[d];
        unsigned v;
        if (c >= '0' && c <= '9') v = static_cast<unsigned>(c - '0');
        else if (c >= 'A' && c <= 'F') v = static_cast<unsigned>(c - 'A' + 10);
        else if (c >= 'a' && c <= 'f') v = static_cast<unsigned>(c - 'a' + 10);
        else throw FormatError(std::string("mask hex: bad digit '") + c + "'");
        for (std::size_t j = 0; j < 4; ++j) {
            const std::size_t idx = d * 4 + j;
            const bool set = (v >> (3 - j)) & 1u;
            if (idx < width) {
                bits[idx] = set ? 1 : 0;
            } else if (set) {
                throw FormatError("mask hex: padding bits must be zero");
            }
        }
    }
    return LayerMask(layer, std::move(bits));
}

std::size_t retain_count_for(double fraction, std::size_t width) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw RangeError("constraint fraction " + std::to_string(fraction) + " outside (0, 1]");
    }
    const auto k = static_cast<std::size_t>(
        std::max(1.0, std::round(fraction * static_cast<double>(width))));
    return std::min(k, width);
}

ResourceConstraint ResourceConstraint::uniform(double fraction, std::size_t num_layers) {
    ResourceConstraint c;
    c.fractions.assign(num_layers, fraction);
    c.validate();
    return c;
}

std::size_t ResourceConstraint::retain_count(std::size_t layer, std::size_t width) const {
    return retain_count_for(fractions.at(layer), width);
}

void ResourceConstraint::validate() const {
    for (double f : fractions) {
        if (!(f > 0.0) || f > 1.0) {
            throw RangeError("constraint fraction " + std::to_string(f) + " outside (0, 1]");
        }
    }
}

SuperNet::SuperNet(SuperNetConfig cfg, RngStream& init) : cfg_(std::move(cfg)) {
    cfg_.validate();
    widths_ = cfg_.layer_widths();
    std::size_t prev = cfg_.input_dim;
    layer_w_.reserve(widths_.size());
    layer_b_.reserve(widths_.size());
    for (std::size_t w : widths_) {
        layer_w_.emplace_back(init_weight(prev, w, init));
        layer_b_.emplace_back(Tensor::zeros({1, w}));
        prev = w;
    }
    head_w_ = Parameter(init_weight(prev, cfg_.num_classes, init));
    head_b_ = Parameter(Tensor::zeros({1, cfg_.num_classes}));
}

std::vector<Parameter*> SuperNet::parameters() {
    std::vector<Parameter*> out;
    for (std::size_t l = 0; l < layer_w_.size(); ++l) {
        out.push_back(&layer_w_[l]);
        out.push_back(&layer_b_[l]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

SuperNet::PlainForward SuperNet::forward_plain(const Tensor& batch,
                                               const std::vector<LayerMask>* masks) const {
    if (batch.cols() != cfg_.input_dim) {
        throw DimensionError("forward: batch " + batch.shape_str() + " does not match input_dim " +
                             std::to_string(cfg_.input_dim));
    }
    std::vector<std::vector<std::uint8_t>> bits;
    if (masks) {
        validate_masks(*this, *masks);
        bits.reserve(masks->size());
        for (const LayerMask& m : *masks) bits.push_back(m.bits);
    }
    return forward_bits(batch, bits);
}

SuperNet::PlainForward SuperNet::forward_bits(
    const Tensor& batch, const std::vector<std::vector<std::uint8_t>>& bits) const {
    PlainForward out;
    out.activations.reserve(widths_.size());
    Tensor h = batch;
    for (std::size_t l = 0; l < widths_.size(); ++l) {
        Tensor z;
        matmul_into(h, layer_w_[l].value, z);
        Tensor zb;
        add_row_into(z, layer_b_[l].value, zb);
        Tensor act;
        relu_into(zb, act);
        if (!bits.empty()) {
            const std::vector<std::uint8_t>& m = bits[l];
            const std::size_t rows = act.rows(), w = act.cols();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    act.data[i * w + j] *= static_cast<double>(m[j]);
        }
        out.activations.push_back(act);
        h = std::move(act);
    }
    Tensor z;
    matmul_into(h, head_w_.value, z);
    add_row_into(z, head_b_.value, out.logits);
    return out;
}

SuperNet::TapeForward SuperNet::forward_tape(Tape& tape, Var batch,
                                             const std::vector<Var>& mask_rows) {
    TapeForward out;
    Var h = batch;
    for (std::size_t l = 0; l < widths_.size(); ++l) {
        Var z = tape.add_row(tape.matmul(h, tape.param(layer_w_[l])), tape.param(layer_b_[l]));
        Var act = tape.relu(z);
        if (!mask_rows.empty()) act = tape.mul_row(act, mask_rows[l]);
        out.activations.push_back(act);
        h = act;
    }
    out.logits = tape.add_row(tape.matmul(h, tape.param(head_w_)), tape.param(head_b_));
    return out;
}

std::uint64_t SuperNet::parameter_checksum() const {
    std::uint64_t h = kFnvOffset;
    auto add_tensor = [&h](const Tensor& t) {
        fnv_add(h, t.data.data(), t.data.size() * sizeof(double));
    };
    for (std::size_t l = 0; l < layer_w_.size(); ++l) {
        add_tensor(layer_w_[l].value);
        add_tensor(layer_b_[l].value);
    }
    add_tensor(head_w_.value);
    add_tensor(head_b_.value);
    return h;
}

void validate_masks(const SuperNet& net, const std::vector<LayerMask>& masks) {
    if (masks.size() != net.num_layers()) {
        throw DimensionError("masks: expected " + std::to_string(net.num_layers()) +
                             " layer masks, got " + std::to_string(masks.size()));
    }
    for (std::size_t l = 0; l < masks.size(); ++l) {
        if (masks[l].width() != net.layer_width(l)) {
            throw DimensionError("mask layer " + std::to_string(l) + ": width " +
                                 std::to_string(masks[l].width()) + " vs layer width " +
                                 std::to_string(net.layer_width(l)));
        }
        masks[l].validate();
    }
}

SuperNet::PlainForward forward_masked(const SuperNet& net, const std::vector<LayerMask>& masks,
                                      const Tensor& batch) {
    validate_masks(net, masks);
    return net.forward_plain(batch, &masks);
}

namespace {

std::vector<std::size_t> retained_indices(const LayerMask& m) {
    std::vector<std::size_t> idx;
    idx.reserve(m.retained);
    for (std::size_t j = 0; j < m.bits.size(); ++j)
        if (m.bits[j]) idx.push_back(j);
    return idx;
}

} // namespace

SubNet extract_subnet(const SuperNet& net, const std::vector<LayerMask>& masks) {
    validate_masks(net, masks);
    SubNet sub;
    sub.masks = masks;
    sub.supernet_checksum = net.parameter_checksum();
    std::vector<std::size_t> prev(net.config().input_dim);
    for (std::size_t i = 0; i < prev.size(); ++i) prev[i] = i;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const std::vector<std::size_t> keep = retained_indices(masks[l]);
        const Tensor& w = net.layer_weight(l).value;
        Tensor cw = Tensor::zeros({prev.size(), keep.size()});
        for (std::size_t i = 0; i < prev.size(); ++i)
            for (std::size_t j = 0; j < keep.size(); ++j)
                cw.data[i * keep.size() + j] = w.at(prev[i], keep[j]);
        Tensor cb = Tensor::zeros({1, keep.size()});
        for (std::size_t j = 0; j < keep.size(); ++j)
            cb.data[j] = net.layer_bias(l).value.data[keep[j]];
        sub.weights.push_back(std::move(cw));
        sub.biases.push_back(std::move(cb));
        prev = keep;
    }
    const Tensor& hw = net.head_weight().value;
    const std::size_t classes = net.config().num_classes;
    Tensor chw = Tensor::zeros({prev.size(), classes});
    for (std::size_t i = 0; i < prev.size(); ++i)
        for (std::size_t j = 0; j < classes; ++j)
            chw.data[i * classes + j] = hw.at(prev[i], j);
    sub.head_weight = std::move(chw);
    sub.head_bias = net.head_bias().value;
    return sub;
}

void scatter_subnet(SuperNet& net, const SubNet& sub) {
    validate_masks(net, sub.masks);
    std::vector<std::size_t> prev(net.config().input_dim);
    for (std::size_t i = 0; i < prev.size(); ++i) prev[i] = i;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const std::vector<std::size_t> keep = retained_indices(sub.masks[l]);
        Tensor& w = net.layer_weight(l).value;
        const Tensor& cw = sub.weights[l];
        for (std::size_t i = 0; i < prev.size(); ++i)
            for (std::size_t j = 0; j < keep.size(); ++j)
                w.at(prev[i], keep[j]) = cw.data[i * keep.size() + j];
        Tensor& b = net.layer_bias(l).value;
        for (std::size_t j = 0; j < keep.size(); ++j) b.data[keep[j]] = sub.biases[l].data[j];
        prev = keep;
    }
    Tensor& hw = net.head_weight().value;
    const std::size_t classes = net.config().num_classes;
    for (std::size_t i = 0; i < prev.size(); ++i)
        for (std::size_t j = 0; j < classes; ++j)
            hw.at(prev[i], j) = sub.head_weight.data[i * classes + j];
    net.head_bias().value = sub.head_bias;
}

Tensor SubNet::forward(const Tensor& batch) const {
    Tensor h = batch;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Tensor z;
        matmul_into(h, weights[l], z);
        Tensor zb;
        add_row_into(z, biases[l], zb);
        relu_into(zb, h);
    }
    Tensor z;
    matmul_into(h, head_weight, z);
    Tensor logits;
    add_row_into(z, head_bias, logits);
    return logits;
}

std::size_t count_params(const SuperNet& net, const std::vector<LayerMask>* masks) {
    if (masks) validate_masks(net, *masks);
    std::size_t total = 0;
    std::size_t prev = net.config().input_dim;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const std::size_t k = masks ? (*masks)[l].retained : net.layer_width(l);
        total += prev * k + k;
        prev = k;
    }
    total += prev * net.config().num_classes + net.config().num_classes;
    return total;
}

std::vector<std::size_t> layer_weight_counts(const SuperNet& net,
                                             const std::vector<LayerMask>* masks) {
    if (masks) validate_masks(net, *masks);
    std::vector<std::size_t> out;
    std::size_t prev = net.config().input_dim;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const std::size_t k = masks ? (*masks)[l].retained : net.layer_width(l);
        out.push_back(prev * k);
        prev = k;
    }
    return out;
}

std::size_t count_flops(const SuperNet& net, const std::vector<LayerMask>* masks) {
    if (masks) validate_masks(net, *masks);
    std::size_t total = 0;
    std::size_t prev = net.config().input_dim;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const std::size_t k = masks ? (*masks)[l].retained : net.layer_width(l);
        total += 2 * prev * k;
        prev = k;
    }
    total += 2 * prev * net.config().num_classes;
    return total;
}

std::vector<std::size_t> layer_flops(const SuperNet& net, const std::vector<LayerMask>* masks) {
    if (masks) validate_masks(net, *masks);
    std::vector<std::size_t> out;
    std::size_t prev = net.config().input_dim;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const std::size_t k = masks ? (*masks)[l].retained : net.layer_width(l);
        out.push_back(2 * prev * k);
        prev = k;
    }
    return out;
}

Tensor layer_features(const Tensor& activations) {
    const std::size_t rows = activations.rows();
    const std::size_t w = activations.cols();
    if (rows < 2) {
        throw InputError("layer_features: need at least 2 batch rows, got " +
                         std::to_string(rows));
    }
    Tensor out = Tensor::zeros({w, 4});
    for (std::size_t j = 0; j < w; ++j) {
        double mean = 0.0, mean_abs = 0.0, active = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double v = activations.data[i * w + j];
            mean += v;
            mean_abs += std::fabs(v);
            if (v > 0.0) active += 1.0;
        }
        const double n = static_cast<double>(rows);
        mean /= n;
        mean_abs /= n;
        active /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double d = activations.data[i * w + j] - mean;
            var += d * d;
        }
        out.data[j * 4 + 0] = mean;
        out.data[j * 4 + 1] = std::sqrt(var / n);
        out.data[j * 4 + 2] = mean_abs;
        out.data[j * 4 + 3] = active;
    }
    return out;
}

} // namespace dance
