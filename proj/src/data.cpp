#include "dance/data.hpp"

#include "dance/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace dance {

void DatasetSpec::validate() const {
    if (classes < 2) throw InputError("dataset: need at least 2 classes");
    if (kind != DatasetKind::idx_images && samples_per_class == 0) {
        throw InputError("dataset: samples_per_class must be > 0");
    }
    const double total = train_frac + val_frac + test_frac;
    if (std::fabs(total - 1.0) > 1e-9) {
        throw InputError("dataset: split fractions must sum to 1, got " + std::to_string(total));
    }
    if (kind == DatasetKind::gaussians && input_dim < 1) {
        throw InputError("dataset: gaussians need input_dim >= 1");
    }
}

Tensor Split::batch(std::size_t offset, std::size_t count) const {
    const std::size_t dim = inputs.cols();
    Tensor out = Tensor::zeros({count, dim});
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            out.data[i * dim + j] = inputs.data[(offset + i) * dim + j];
    return out;
}

std::vector<int> Split::label_batch(std::size_t offset, std::size_t count) const {
    return std::vector<int>(labels.begin() + static_cast<long>(offset),
                            labels.begin() + static_cast<long>(offset + count));
}

namespace {

Dataset split_rows(std::vector<std::vector<double>> rows, std::vector<int> labels,
                   std::size_t input_dim, std::size_t classes, const DatasetSpec& spec,
                   RngStream& rng) {
    const std::size_t n = rows.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    // Fisher-Yates with the dedicated data stream.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    const auto n_train = static_cast<std::size_t>(std::round(spec.train_frac * n));
    const auto n_val = static_cast<std::size_t>(std::round(spec.val_frac * n));
    const std::size_t n_test = n - n_train - n_val;

    auto take = [&](std::size_t begin, std::size_t count) {
        Split s;
        s.inputs = Tensor::zeros({count, input_dim});
        s.labels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = order[begin + i];
            for (std::size_t j = 0; j < input_dim; ++j)
                s.inputs.data[i * input_dim + j] = rows[src][j];
            s.labels[i] = labels[src];
        }
        return s;
    };

    Dataset d;
    d.input_dim = input_dim;
    d.classes = classes;
    d.train = take(0, n_train);
    d.val = take(n_train, n_val);
    d.test = take(n_train + n_val, n_test);
    return d;
}

} // namespace

Dataset generate_synthetic(const DatasetSpec& spec, RngStream& rng) {
    spec.validate();
    if (spec.kind == DatasetKind::idx_images) {
        throw InputError("generate_synthetic: idx datasets load from files");
    }
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    const std::size_t total = spec.classes * spec.samples_per_class;
    if (total == 0) throw InputError("dataset: no samples requested");
    rows.reserve(total);
    labels.reserve(total);
    constexpr double kTwoPi = 6.283185307179586476925286766559;

    if (spec.kind == DatasetKind::gaussians) {
        // Class centers on a circle in the first two dims (single axis when
        // input_dim == 1), isotropic noise around them.
        for (std::size_t c = 0; c < spec.classes; ++c) {
            std::vector<double> center(spec.input_dim, 0.0);
            const double angle = kTwoPi * static_cast<double>(c) / static_cast<double>(spec.classes);
            center[0] = 0.5 * spec.spacing * std::cos(angle);
            if (spec.input_dim > 1) center[1] = 0.5 * spec.spacing * std::sin(angle);
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                std::vector<double> row(spec.input_dim);
                for (std::size_t j = 0; j < spec.input_dim; ++j)
                    row[j] = center[j] + rng.normal(0.0, spec.noise);
                rows.push_back(std::move(row));
                labels.push_back(static_cast<int>(c));
            }
        }
        return split_rows(std::move(rows), std::move(labels), spec.input_dim, spec.classes, spec,
                          rng);
    }

    // Interleaved 2-d spirals.
    for (std::size_t c = 0; c < spec.classes; ++c) {
        const double phase = kTwoPi * static_cast<double>(c) / static_cast<double>(spec.classes);
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            const double t = (static_cast<double>(s) + 0.5) /
                             static_cast<double>(spec.samples_per_class);
            const double radius = 0.2 + 2.3 * t;
            const double angle = phase + kTwoPi * spec.turns * t;
            std::vector<double> row = {radius * std::cos(angle) + rng.normal(0.0, spec.noise),
                                       radius * std::sin(angle) + rng.normal(0.0, spec.noise)};
            rows.push_back(std::move(row));
            labels.push_back(static_cast<int>(c));
        }
    }
    return split_rows(std::move(rows), std::move(labels), 2, spec.classes, spec, rng);
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) {
        throw FormatError(path + ": truncated at offset " + std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::uint32_t magic = read_be32(in, path, 0);
    if (magic != 0x00000803u) {
        throw FormatError(path + ": bad image magic at offset 0 (got " + std::to_string(magic) +
                          ", want 2051)");
    }
    IdxImages img;
    img.count = read_be32(in, path, 4);
    img.rows = read_be32(in, path, 8);
    img.cols = read_be32(in, path, 12);
    img.pixels.resize(img.count * img.rows * img.cols);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw FormatError(path + ": truncated pixel payload at offset 16");
    return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::uint32_t magic = read_be32(in, path, 0);
    if (magic != 0x00000801u) {
        throw FormatError(path + ": bad label magic at offset 0 (got " + std::to_string(magic) +
                          ", want 2049)");
    }
    const std::uint32_t count = read_be32(in, path, 4);
    std::vector<std::uint8_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (!in) throw FormatError(path + ": truncated label payload at offset 8");
    return labels;
}

Split to_split(const IdxImages& img, const std::vector<std::uint8_t>& labels, std::size_t begin,
               std::size_t count) {
    const std::size_t dim = img.rows * img.cols;
    Split s;
    s.inputs = Tensor::zeros({count, dim});
    s.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < dim; ++j)
            s.inputs.data[i * dim + j] =
                static_cast<double>(img.pixels[(begin + i) * dim + j]) / 255.0;
        s.labels[i] = static_cast<int>(labels[begin + i]);
    }
    return s;
}

} // namespace

Dataset load_idx(const DatasetSpec& spec) {
    IdxImages train_img = read_idx_images(spec.idx_train_images);
    std::vector<std::uint8_t> train_lbl = read_idx_labels(spec.idx_train_labels);
    if (train_img.count != train_lbl.size()) {
        throw FormatError("idx: image count " + std::to_string(train_img.count) +
                          " does not match label count " + std::to_string(train_lbl.size()));
    }
    IdxImages test_img = read_idx_images(spec.idx_test_images);
    std::vector<std::uint8_t> test_lbl = read_idx_labels(spec.idx_test_labels);
    if (test_img.count != test_lbl.size()) {
        throw FormatError("idx: test image count " + std::to_string(test_img.count) +
                          " does not match label count " + std::to_string(test_lbl.size()));
    }
    if (test_img.rows != train_img.rows || test_img.cols != train_img.cols) {
        throw FormatError("idx: train/test image dimensions differ");
    }

    Dataset d;
    d.input_dim = train_img.rows * train_img.cols;
    int max_label = 0;
    for (std::uint8_t l : train_lbl) max_label = std::max(max_label, static_cast<int>(l));
    for (std::uint8_t l : test_lbl) max_label = std::max(max_label, static_cast<int>(l));
    d.classes = static_cast<std::size_t>(max_label) + 1;

    // Last 10% of train becomes validation; file order is kept.
    const std::size_t n_val = train_img.count / 10;
    const std::size_t n_train = train_img.count - n_val;
    d.train = to_split(train_img, train_lbl, 0, n_train);
    d.val = to_split(train_img, train_lbl, n_train, n_val);
    d.test = to_split(test_img, test_lbl, 0, test_img.count);
    return d;
}

void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& images,
                      std::size_t rows, std::size_t cols) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_be32(out, 0x00000803u);
    write_be32(out, static_cast<std::uint32_t>(images.size()));
    write_be32(out, static_cast<std::uint32_t>(rows));
    write_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& img : images) {
        if (img.size() != rows * cols) throw InputError("write_idx_images: image size mismatch");
        out.write(reinterpret_cast<const char*>(img.data()),
                  static_cast<std::streamsize>(img.size()));
    }
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_be32(out, 0x00000801u);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

} // namespace dance
