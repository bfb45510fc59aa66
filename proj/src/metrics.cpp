#include "dance/metrics.hpp"

#include "dance/errors.hpp"

#include <json.hpp>

namespace dance {

namespace {

using nlohmann::json;

json to_json(const MetricsRecord& r) {
    json j;
    j["run_id"] = r.run_id;
    j["stage"] = r.stage;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["loss_task"] = r.loss.task;
    j["loss_sparsity"] = r.loss.sparsity;
    j["loss_diversity"] = r.loss.diversity;
    j["loss_correlation"] = r.loss.correlation;
    j["loss_stability"] = r.loss.stability;
    j["loss_total"] = r.loss.total;
    j["val_accuracy"] = r.val_accuracy;
    j["layer_k"] = r.layer_k;
    j["layer_mean_score"] = r.layer_mean_score;
    j["layer_score_static"] = r.layer_score_static;
    j["layer_score_dynamic"] = r.layer_score_dynamic;
    j["layer_score_feature"] = r.layer_score_feature;
    j["layer_score_corr"] = r.layer_score_corr;
    j["diversity_collapse"] = r.diversity_collapse;
    j["wall_ms"] = r.wall_ms;
    return j;
}

} // namespace

std::string MetricsRecord::to_json_line() const { return to_json(*this).dump(); }

MetricsRecord MetricsRecord::from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("metrics line is not valid json: ") + e.what());
    }
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.stage = j.at("stage").get<int>();
    r.epoch = j.at("epoch").get<std::uint64_t>();
    r.step = j.at("step").get<std::uint64_t>();
    r.loss.task = j.at("loss_task").get<double>();
    r.loss.sparsity = j.at("loss_sparsity").get<double>();
    r.loss.diversity = j.at("loss_diversity").get<double>();
    r.loss.correlation = j.at("loss_correlation").get<double>();
    r.loss.stability = j.at("loss_stability").get<double>();
    r.loss.total = j.at("loss_total").get<double>();
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.layer_k = j.at("layer_k").get<std::vector<std::size_t>>();
    r.layer_mean_score = j.at("layer_mean_score").get<std::vector<double>>();
    r.layer_score_static = j.at("layer_score_static").get<std::vector<double>>();
    r.layer_score_dynamic = j.at("layer_score_dynamic").get<std::vector<double>>();
    r.layer_score_feature = j.at("layer_score_feature").get<std::vector<double>>();
    r.layer_score_corr = j.at("layer_score_corr").get<std::vector<double>>();
    r.diversity_collapse = j.at("diversity_collapse").get<bool>();
    r.wall_ms = j.at("wall_ms").get<double>();
    return r;
}

JsonlMetricsWriter::JsonlMetricsWriter(const std::string& path, bool wall_clock)
    : out_(path, std::ios::app), wall_clock_(wall_clock) {
    if (!out_) throw IoError("cannot open metrics file " + path);
}

void JsonlMetricsWriter::emit(const MetricsRecord& record) {
    MetricsRecord r = record;
    if (!wall_clock_) r.wall_ms = 0.0;
    out_ << r.to_json_line() << '\n';
    out_.flush();
    if (!out_) throw IoError("metrics write failed");
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(MetricsRecord::from_json_line(line));
    }
    return out;
}

bool metrics_equal_ignoring_wall(const std::string& path_a, const std::string& path_b) {
    std::ifstream a(path_a), b(path_b);
    if (!a || !b) throw IoError("cannot open metrics files for comparison");
    std::string la, lb;
    for (;;) {
        const bool ga = static_cast<bool>(std::getline(a, la));
        const bool gb = static_cast<bool>(std::getline(b, lb));
        if (ga != gb) return false;
        if (!ga) return true;
        if (la == lb) continue;
        MetricsRecord ra = MetricsRecord::from_json_line(la);
        MetricsRecord rb = MetricsRecord::from_json_line(lb);
        ra.wall_ms = 0.0;
        rb.wall_ms = 0.0;
        if (ra.to_json_line() != rb.to_json_line()) return false;
    }
}

} // namespace dance
