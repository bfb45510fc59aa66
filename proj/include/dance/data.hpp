#pragma once

#include "dance/rng.hpp"
#include "dance/tensor.hpp"

#include <string>
#include <vector>

namespace dance {

enum class DatasetKind { gaussians, spirals, idx_images };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::spirals;
    std::size_t classes = 3;
    std::size_t samples_per_class = 400;
    std::size_t input_dim = 2;        // gaussians only; spirals are 2-d
    double noise = 0.15;
    double spacing = 4.0;             // gaussians center spacing
    double turns = 1.5;               // spirals winding
    double train_frac = 0.81;
    double val_frac = 0.09;
    double test_frac = 0.10;
    std::string idx_train_images, idx_train_labels;
    std::string idx_test_images, idx_test_labels;

    void validate() const;
};

struct Split {
    Tensor inputs;                 // N x input_dim
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    Tensor batch(std::size_t offset, std::size_t count) const;
    std::vector<int> label_batch(std::size_t offset, std::size_t count) const;
};

struct Dataset {
    Split train, val, test;
    std::size_t input_dim = 0;
    std::size_t classes = 0;
};

Dataset generate_synthetic(const DatasetSpec& spec, RngStream& rng);

// Big-endian IDX ingestion; pixels scaled to [0,1], 10% of train becomes the
// validation split.
Dataset load_idx(const DatasetSpec& spec);

// Test helper as much as production code: writes a minimal IDX pair.
void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& images,
                      std::size_t rows, std::size_t cols);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

} // namespace dance
