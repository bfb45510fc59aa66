#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace dance {

struct LossBreakdown {
    double task = 0.0;
    double sparsity = 0.0;      // weighted contributions; total = task + sum
    double diversity = 0.0;
    double correlation = 0.0;
    double stability = 0.0;
    double total = 0.0;

    double reconstructed() const {
        return task + sparsity + diversity + correlation + stability;
    }
};

// One metrics line; emitted once per epoch per stage.
struct MetricsRecord {
    std::string run_id;
    int stage = 0;
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    LossBreakdown loss;
    double val_accuracy = 0.0;
    std::vector<std::size_t> layer_k;
    std::vector<double> layer_mean_score;
    std::vector<double> layer_score_static;
    std::vector<double> layer_score_dynamic;
    std::vector<double> layer_score_feature;
    std::vector<double> layer_score_corr;
    bool diversity_collapse = false;
    double wall_ms = 0.0;

    std::string to_json_line() const;
    static MetricsRecord from_json_line(const std::string& line);
};

class MetricsSink {
public:
    virtual ~MetricsSink() = default;
    virtual void emit(const MetricsRecord& record) = 0;
};

// Newline-delimited JSON writer; every line is self-describing and the file
// stays parseable after truncation. Flushes on every record (records are
// epoch-granular).
class JsonlMetricsWriter final : public MetricsSink {
public:
    explicit JsonlMetricsWriter(const std::string& path, bool wall_clock = true);
    void emit(const MetricsRecord& record) override;

private:
    std::ofstream out_;
    bool wall_clock_;
};

class NullMetricsSink final : public MetricsSink {
public:
    void emit(const MetricsRecord&) override {}
};

// Collects records in memory (tests, resume comparisons).
class VectorMetricsSink final : public MetricsSink {
public:
    void emit(const MetricsRecord& record) override { records.push_back(record); }
    std::vector<MetricsRecord> records;
};

std::vector<MetricsRecord> read_metrics(const std::string& path);

// Byte comparison after zeroing wall-clock fields; wall time is the one
// value (config, seed) does not determine.
bool metrics_equal_ignoring_wall(const std::string& path_a, const std::string& path_b);

} // namespace dance
