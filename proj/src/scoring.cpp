#include "dance/scoring.hpp"

#include "dance/errors.hpp"

#include <cmath>

namespace dance {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

void ScoreWeights::validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || lambda_noise < 0 ||
        lambda_corr < 0) {
        throw ValidationError("score weights must be non-negative");
    }
    if (!(alpha > 0.0) || alpha > 1.0) {
        throw ValidationError("score alpha must be in (0, 1]");
    }
    if (lambda1 == 0 && lambda2 == 0 && lambda3 == 0 && lambda4 == 0) {
        throw ValidationError("all four score weights are zero; the score would be degenerate");
    }
}

ImportanceState::ImportanceState(std::size_t layer, std::size_t width, RngStream& init,
                                 std::size_t buffer_batches)
    : layer_(layer), width_(width), buffer_batches_(buffer_batches) {
    Tensor logits = Tensor::zeros({1, width});
    for (double& v : logits.data) v = init.normal(0.0, 0.01);
    static_logits_ = Parameter(std::move(logits));
    fusion_w_ = Parameter(Tensor::zeros({1, 4}));
    dynamic_.assign(width, 0.5);
    feature_.assign(width, 1.0 / static_cast<double>(width));
}

std::vector<double> ImportanceState::static_importance() const {
    std::vector<double> out(width_);
    for (std::size_t j = 0; j < width_; ++j) out[j] = sigmoid(static_logits_.value.data[j]);
    return out;
}

Var ImportanceState::static_importance_var(Tape& tape) {
    return tape.sigmoid(tape.param(static_logits_));
}

std::vector<double> ImportanceState::fuse(const Tensor& layer_summary) const {
    if (layer_summary.rows() != width_ || layer_summary.cols() != 4) {
        throw DimensionError("fuse: layer summary " + layer_summary.shape_str() +
                             " does not match width " + std::to_string(width_));
    }
    std::vector<double> out(width_, 0.0);
    for (std::size_t j = 0; j < width_; ++j) {
        double acc = 0.0;
        for (std::size_t s = 0; s < 4; ++s)
            acc += fusion_w_.value.data[s] * layer_summary.data[j * 4 + s];
        out[j] = acc;
    }
    return out;
}

void ImportanceState::dynamic_update(const Tensor& layer_summary, std::size_t batch_rows,
                                     const ScoreWeights& w, RngStream& noise) {
    if (batch_rows < 1) throw InputError("dynamic_update: batch_rows must be >= 1");
    if (!layer_summary.all_finite()) {
        ++skipped_;
        return;
    }
    const std::vector<double> fused = fuse(layer_summary);
    std::vector<double> mean_gate(width_, 0.0);
    for (std::size_t b = 0; b < batch_rows; ++b) {
        for (std::size_t j = 0; j < width_; ++j) {
            const double eps = noise.gumbel();
            mean_gate[j] +=
                sigmoid(fused[j] + static_logits_.value.data[j] + w.lambda_noise * eps);
        }
    }
    double delta = 0.0;
    for (std::size_t j = 0; j < width_; ++j) {
        mean_gate[j] /= static_cast<double>(batch_rows);
        const double next = (1.0 - w.alpha) * dynamic_[j] + w.alpha * mean_gate[j];
        delta += std::fabs(next - dynamic_[j]);
        dynamic_[j] = next;
    }
    last_delta_l1_ = delta;
    ++step_;
}

void ImportanceState::feature_update(const Tensor& batch_features, const ScoreWeights& w) {
    if (batch_features.cols() != width_) {
        throw DimensionError("feature_update: features " + batch_features.shape_str() +
                             " do not match width " + std::to_string(width_));
    }
    if (batch_features.rows() < 1) throw InputError("feature_update: empty batch");
    Tensor mean;
    {
        const std::size_t rows = batch_features.rows();
        mean = Tensor::zeros({1, width_});
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < width_; ++j)
                mean.data[j] += batch_features.data[i * width_ + j];
        for (std::size_t j = 0; j < width_; ++j) mean.data[j] /= static_cast<double>(rows);
    }
    Tensor soft;
    softmax_rows_into(mean, soft);
    double delta = 0.0;
    for (std::size_t j = 0; j < width_; ++j) {
        const double next = (1.0 - w.alpha) * feature_[j] + w.alpha * soft.data[j];
        delta += std::fabs(next - feature_[j]);
        feature_[j] = next;
    }
    last_delta_l1_ += delta;
}

void ImportanceState::push_activations(const Tensor& activations) {
    if (activations.cols() != width_) {
        throw DimensionError("push_activations: " + activations.shape_str() +
                             " does not match width " + std::to_string(width_));
    }
    buffer_.push_back(activations);
    while (buffer_.size() > buffer_batches_) buffer_.pop_front();
}

bool ImportanceState::buffer_ready() const { return buffered_rows() >= 2; }

std::size_t ImportanceState::buffered_rows() const {
    std::size_t n = 0;
    for (const Tensor& t : buffer_) n += t.rows();
    return n;
}

namespace {

// Pearson correlation of buffered activation columns. Zero-variance columns
// get a zero row/column.
std::vector<double> abs_corr_row_means(const std::deque<Tensor>& buffer, std::size_t width) {
    std::size_t n = 0;
    for (const Tensor& t : buffer) n += t.rows();
    std::vector<double> mean(width, 0.0), var(width, 0.0);
    for (const Tensor& t : buffer)
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < width; ++j) mean[j] += t.data[i * width + j];
    for (std::size_t j = 0; j < width; ++j) mean[j] /= static_cast<double>(n);
    std::vector<std::vector<double>> centered;
    centered.reserve(n);
    for (const Tensor& t : buffer)
        for (std::size_t i = 0; i < t.rows(); ++i) {
            std::vector<double> row(width);
            for (std::size_t j = 0; j < width; ++j) {
                row[j] = t.data[i * width + j] - mean[j];
                var[j] += row[j] * row[j];
            }
            centered.push_back(std::move(row));
        }
    std::vector<double> out(width, 0.0);
    if (width < 2) return out;
    for (std::size_t a = 0; a < width; ++a) {
        if (var[a] <= 0.0) continue;
        double acc = 0.0;
        for (std::size_t b = 0; b < width; ++b) {
            if (b == a || var[b] <= 0.0) continue;
            double cov = 0.0;
            for (const std::vector<double>& row : centered) cov += row[a] * row[b];
            acc += std::fabs(cov / std::sqrt(var[a] * var[b]));
        }
        out[a] = acc / static_cast<double>(width - 1);
    }
    return out;
}

} // namespace

std::vector<double> ImportanceState::correlation_penalty(const ScoreWeights& w) const {
    if (buffer_.empty()) {
        throw StateError("correlation_penalty: activation buffer empty; run a forward pass first");
    }
    if (!buffer_ready()) {
        throw StateError("correlation_penalty: need at least 2 buffered rows");
    }
    const std::vector<double> rowmean = abs_corr_row_means(buffer_, width_);
    std::vector<double> out(width_);
    for (std::size_t j = 0; j < width_; ++j) out[j] = 1.0 - w.lambda_corr * rowmean[j];
    return out;
}

double ImportanceState::mean_abs_correlation() const {
    if (!buffer_ready()) return 0.0;
    const std::vector<double> rowmean = abs_corr_row_means(buffer_, width_);
    double acc = 0.0;
    for (double v : rowmean) acc += v;
    return acc / static_cast<double>(width_);
}

ScoreVector combined_score(const ImportanceState& state, const ScoreWeights& weights) {
    weights.validate();
    ScoreVector sv;
    sv.layer = state.layer();
    sv.stat = state.static_importance();
    sv.dyn = state.dynamic_importance();
    sv.feat = state.feature_importance();
    sv.corr = state.buffer_ready() ? state.correlation_penalty(weights)
                                   : std::vector<double>(state.width(), 1.0);
    sv.values.resize(state.width());
    for (std::size_t j = 0; j < state.width(); ++j) {
        sv.values[j] = weights.lambda1 * sv.stat[j] + weights.lambda2 * sv.dyn[j] +
                       weights.lambda3 * sv.feat[j] + weights.lambda4 * sv.corr[j];
    }
    return sv;
}

Var combined_score_var(Tape& tape, ImportanceState& state, const ScoreWeights& weights) {
    weights.validate();
    const ScoreVector sv = combined_score(state, weights);
    Tensor rest = Tensor::zeros({1, state.width()});
    for (std::size_t j = 0; j < state.width(); ++j) {
        rest.data[j] = weights.lambda2 * sv.dyn[j] + weights.lambda3 * sv.feat[j] +
                       weights.lambda4 * sv.corr[j];
    }
    Var stat = tape.scale(state.static_importance_var(tape), weights.lambda1);
    return tape.add_const(stat, rest);
}

} // namespace dance
