#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dance {

// Dense row-major float64 tensor. Value semantics; shapes are validated at
// op boundaries, not on every access.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor row(std::vector<double> values);           // 1 x N
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor scalar(double value);                      // 1 x 1

    std::size_t size() const { return data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Trainable tensor plus its gradient and AdamW moment buffers.
struct Parameter {
    Tensor value;
    Tensor grad;
    Tensor moment1;
    Tensor moment2;
    std::int64_t step = 0;

    Parameter() = default;
    explicit Parameter(Tensor init);

    void zero_grad();
};

} // namespace dance
