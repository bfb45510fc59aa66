#pragma once

#include "dance/tensor.hpp"

#include <functional>
#include <vector>

namespace dance {

// Handle into a Tape. Valid until the owning tape is cleared.
struct Var {
    int id = -1;
};

// Reverse-mode tape over whole tensors. A fresh tape is built per training
// step: forward calls append nodes in topological order, backward() walks
// them once in reverse and accumulates gradients of parameter leaves into
// their Parameter::grad buffers.
//
// Scope is exactly what the SuperNet, the select gate and the loss terms
// need: dense affine maps, the three activations, reductions, broadcast
// row ops, and the straight-through estimator.
class Tape {
public:
    // Leaves.
    Var leaf(Tensor value);                 // constant, receives no gradient
    Var param(Parameter& p);                // gradient flows into p.grad

    // Linear algebra.
    Var matmul(Var a, Var b);               // [B x I] * [I x O]
    Var add(Var a, Var b);                  // same shape
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);                  // elementwise, same shape
    Var add_row(Var a, Var row);            // [B x W] + [1 x W], broadcast over rows
    Var mul_row(Var a, Var row);            // [B x W] ⊙ [1 x W]
    Var scale(Var a, double c);
    Var add_const(Var a, const Tensor& c);  // same shape constant
    Var add_scalar(Var a, double c);
    Var concat_cols(Var a, Var b);          // [1 x M] ⊕ [1 x N] -> [1 x (M+N)]

    // Activations.
    Var relu(Var a);
    Var sigmoid(Var a);
    Var softmax_rows(Var a);                // softmax over the last dimension
    Var log_softmax_rows(Var a);

    // Reductions and scalar shaping.
    Var mean_rows(Var a);                   // [B x W] -> [1 x W], per-column mean
    Var std_rows(Var a);                    // [B x W] -> [1 x W], population std
    Var sum_all(Var a);                     // -> [1 x 1]
    Var mean_all(Var a);
    Var abs(Var a);                         // |x|, subgradient 0 at 0
    Var xlogx(Var a);                       // x ln x with 0 at x <= 0 (entropy terms)
    Var log(Var a);                         // ln x, inputs must be positive

    // Mean over the batch of -log softmax(logits)[label].
    Var cross_entropy(Var logits, const std::vector<int>& labels);

    // Forward value is the hard mask; gradient passes through to `soft`
    // unchanged.
    Var straight_through(Var soft, Tensor hard);

    void backward(Var root);                // root must be a single scalar

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;        // valid after backward()
    double scalar(Var v) const;             // value of a 1x1 node

    std::size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Tensor val;
        Tensor grad;
        int parent_a = -1;
        int parent_b = -1;
        Parameter* bound = nullptr;
        std::function<void(Tape&, Node&)> back;
    };

    Var push(Node n);
    Node& node(Var v);
    Node& node(int id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Shared dense kernels so the tape forward and the plain (no-tape) forward
// produce bit-identical values.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);
void add_row_into(const Tensor& a, const Tensor& row, Tensor& out);
void relu_into(const Tensor& a, Tensor& out);
void softmax_rows_into(const Tensor& a, Tensor& out);

} // namespace dance
