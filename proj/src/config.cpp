#include "dance/config.hpp"

#include "dance/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dance {

std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t seed) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    throw ValidationError(key + ": expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ValidationError(key + ": expected a number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const std::string& item : split_list(v)) out.push_back(parse_double(key, item));
    if (out.empty()) throw ValidationError(key + ": empty list");
    return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(v)) out.push_back(parse_u64(key, item));
    if (out.empty()) throw ValidationError(key + ": empty list");
    return out;
}

bool in_grid(double v, const std::vector<double>& grid) {
    for (double g : grid) {
        if (std::fabs(v - g) < 1e-12) return true;
    }
    return false;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        if constexpr (std::is_same_v<T, double>) os << fmt(v[i]);
        else os << v[i];
    }
    return os.str();
}

} // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key = value");
        }
        cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

void ExperimentConfig::apply(const std::string& key, const std::string& value) {
    const std::vector<double> kPaperLrs = {0.0001, 0.0005, 0.001};
    const std::vector<double> kPaperTaus = {0.1, 0.5, 1.0};
    const std::vector<double> kPaperConstraints = {0.3, 0.4, 0.5};

    if (key == "seed") { seed = parse_u64(key, value); return; }
    if (key == "out_dir") { out_dir = value; return; }

    if (key == "data.kind") {
        if (value == "gaussians") data.kind = DatasetKind::gaussians;
        else if (value == "spirals") data.kind = DatasetKind::spirals;
        else if (value == "idx") data.kind = DatasetKind::idx_images;
        else throw ValidationError("data.kind: expected gaussians|spirals|idx, got '" + value + "'");
        return;
    }
    if (key == "data.classes") { data.classes = parse_u64(key, value); return; }
    if (key == "data.samples_per_class") { data.samples_per_class = parse_u64(key, value); return; }
    if (key == "data.input_dim") { data.input_dim = parse_u64(key, value); return; }
    if (key == "data.noise") { data.noise = parse_double(key, value); return; }
    if (key == "data.spacing") { data.spacing = parse_double(key, value); return; }
    if (key == "data.turns") { data.turns = parse_double(key, value); return; }
    if (key == "data.train_frac") { data.train_frac = parse_double(key, value); return; }
    if (key == "data.val_frac") { data.val_frac = parse_double(key, value); return; }
    if (key == "data.test_frac") { data.test_frac = parse_double(key, value); return; }
    if (key == "data.idx_train_images") { data.idx_train_images = value; return; }
    if (key == "data.idx_train_labels") { data.idx_train_labels = value; return; }
    if (key == "data.idx_test_images") { data.idx_test_images = value; return; }
    if (key == "data.idx_test_labels") { data.idx_test_labels = value; return; }

    if (key == "net.layers") { net_layers = parse_u64(key, value); return; }
    if (key == "net.width") { net_width = parse_u64(key, value); return; }
    if (key == "net.widths") {
        net_widths.clear();
        for (std::uint64_t w : parse_u64_list(key, value)) net_widths.push_back(w);
        return;
    }

    if (key == "gate.tau") {
        gate.tau = parse_double(key, value);
        if (!in_grid(gate.tau, kPaperTaus)) {
            warnings.push_back("gate.tau=" + value + " is outside the declared grid {0.1,0.5,1.0}");
        }
        return;
    }
    if (key == "gate.hidden") { gate.hidden = parse_u64(key, value); return; }
    if (key == "gate.embed_dim") { gate.embed_dim = parse_u64(key, value); return; }
    if (key == "gate.straight_through") { gate.straight_through = parse_bool(key, value); return; }
    if (key == "gate.k_min") { gate.k_min = parse_u64(key, value); return; }

    if (key == "score.lambda1") { score.lambda1 = parse_double(key, value); return; }
    if (key == "score.lambda2") { score.lambda2 = parse_double(key, value); return; }
    if (key == "score.lambda3") { score.lambda3 = parse_double(key, value); return; }
    if (key == "score.lambda4") { score.lambda4 = parse_double(key, value); return; }
    if (key == "score.lambda_noise") { score.lambda_noise = parse_double(key, value); return; }
    if (key == "score.lambda_corr") { score.lambda_corr = parse_double(key, value); return; }
    if (key == "score.alpha") { score.alpha = parse_double(key, value); return; }
    if (key == "score.buffer_batches") { score_buffer_batches = parse_u64(key, value); return; }

    if (key == "train.stage1_epochs") { train.stage1_epochs = parse_u64(key, value); return; }
    if (key == "train.stage2_epochs") { train.stage2_epochs = parse_u64(key, value); return; }
    if (key == "train.stage3_epochs") { train.stage3_epochs = parse_u64(key, value); return; }
    if (key == "train.t_samples") { train.t_samples = parse_u64(key, value); return; }
    if (key == "train.batch_size") { train.batch_size = parse_u64(key, value); return; }
    if (key == "train.lr_gates" || key == "train.lr_batch_repr" || key == "train.lr_backbone") {
        const double lr = parse_double(key, value);
        if (!in_grid(lr, kPaperLrs)) {
            warnings.push_back(key + "=" + value +
                               " is outside the declared grid {0.0001,0.0005,0.001}");
        }
        if (key == "train.lr_gates") train.lr_gates = lr;
        else if (key == "train.lr_batch_repr") train.lr_batch_repr = lr;
        else train.lr_backbone = lr;
        return;
    }
    if (key == "train.constraint_grid") {
        train.constraint_grid = parse_double_list(key, value);
        for (double c : train.constraint_grid) {
            if (!in_grid(c, kPaperConstraints)) {
                warnings.push_back("train.constraint_grid value " + fmt(c) +
                                   " is outside the declared grid {0.3,0.4,0.5}");
                break;
            }
        }
        return;
    }
    if (key == "train.patience") { train.patience = parse_u64(key, value); return; }
    if (key == "train.w_sparsity") { train.w_sparsity = parse_double(key, value); return; }
    if (key == "train.w_diversity") { train.w_diversity = parse_double(key, value); return; }
    if (key == "train.w_corr") { train.w_corr = parse_double(key, value); return; }
    if (key == "train.w_stability") { train.w_stability = parse_double(key, value); return; }
    if (key == "train.path_drop") { train.path_drop = parse_bool(key, value); return; }
    if (key == "train.path_drop_final_keep") {
        train.path_drop_final_keep = parse_double(key, value);
        return;
    }
    if (key == "train.self_distill") { train.self_distill = parse_bool(key, value); return; }
    if (key == "train.self_distill_weight") {
        train.self_distill_weight = parse_double(key, value);
        return;
    }
    if (key == "train.fix_constraint") { train.fix_constraint = parse_bool(key, value); return; }
    if (key == "train.fixed_constraint") {
        train.fixed_constraint = parse_double(key, value);
        return;
    }
    if (key == "train.gate_feedback") {
        if (value == "straight_through") train.log_prob_feedback = false;
        else if (value == "log_prob") train.log_prob_feedback = true;
        else throw ValidationError("train.gate_feedback: expected straight_through|log_prob");
        return;
    }
    if (key == "train.w_feedback") { train.w_feedback = parse_double(key, value); return; }

    if (key == "sweep.constraints") {
        if (value == "fine") sweep.constraints = fine_grid();
        else if (value == "coarse") sweep.constraints = coarse_grid();
        else sweep.constraints = parse_double_list(key, value);
        return;
    }
    if (key == "sweep.seeds") { sweep.seeds = parse_u64_list(key, value); return; }
    if (key == "sweep.baselines") {
        sweep.baselines.clear();
        for (const std::string& b : split_list(value))
            sweep.baselines.push_back(baseline_from_name(b));
        return;
    }
    if (key == "sweep.fine_tune") { sweep.fine_tune = parse_bool(key, value); return; }

    if (key == "ablate.constraints") { ablate.constraints = parse_double_list(key, value); return; }
    if (key == "ablate.seeds") { ablate.seeds = parse_u64_list(key, value); return; }

    if (key == "sensitivity.seeds") { sensitivity_seeds = parse_u64_list(key, value); return; }
    if (key == "sensitivity.constraint") {
        sensitivity_constraint = parse_double(key, value);
        return;
    }

    if (key == "metrics.wall_clock") { metrics_wall_clock = parse_bool(key, value); return; }

    throw ValidationError("unknown config key '" + key + "'");
}

void ExperimentConfig::validate() const {
    data.validate();
    gate.validate();
    score.validate();
    train.validate();
    sweep.validate();
    if (net_layers < 1) throw ValidationError("net.layers must be >= 1");
    if (net_width < 2) throw ValidationError("net.width must be >= 2");
    if (!net_widths.empty() && net_widths.size() != net_layers) {
        throw ValidationError("net.widths length must equal net.layers");
    }
    if (train.stage1_epochs < 1 || train.stage2_epochs < 1 || train.stage3_epochs < 1) {
        throw ValidationError("train: all stage epoch counts must be >= 1");
    }
    if (score_buffer_batches < 1) throw ValidationError("score.buffer_batches must be >= 1");
    if (!(sensitivity_constraint > 0.0) || sensitivity_constraint > 1.0) {
        throw ValidationError("sensitivity.constraint outside (0, 1]");
    }
    for (double c : ablate.constraints) {
        if (!(c > 0.0) || c > 1.0) throw ValidationError("ablate.constraints outside (0, 1]");
    }
    if (ablate.seeds.empty()) throw ValidationError("ablate.seeds is empty");
}

SuperNetConfig ExperimentConfig::supernet_config(std::size_t input_dim,
                                                 std::size_t classes) const {
    SuperNetConfig cfg;
    cfg.input_dim = input_dim;
    cfg.num_classes = classes;
    cfg.num_layers = net_layers;
    cfg.width = net_width;
    cfg.widths = net_widths;
    return cfg;
}

std::string ExperimentConfig::to_text() const {
    std::vector<std::string> lines;
    auto put = [&lines](const std::string& k, const std::string& v) {
        lines.push_back(k + " = " + v);
    };
    put("seed", std::to_string(seed));
    put("out_dir", out_dir);
    put("data.kind", data.kind == DatasetKind::gaussians
                         ? "gaussians"
                         : (data.kind == DatasetKind::spirals ? "spirals" : "idx"));
    put("data.classes", std::to_string(data.classes));
    put("data.samples_per_class", std::to_string(data.samples_per_class));
    put("data.input_dim", std::to_string(data.input_dim));
    put("data.noise", fmt(data.noise));
    put("data.spacing", fmt(data.spacing));
    put("data.turns", fmt(data.turns));
    put("data.train_frac", fmt(data.train_frac));
    put("data.val_frac", fmt(data.val_frac));
    put("data.test_frac", fmt(data.test_frac));
    put("data.idx_train_images", data.idx_train_images);
    put("data.idx_train_labels", data.idx_train_labels);
    put("data.idx_test_images", data.idx_test_images);
    put("data.idx_test_labels", data.idx_test_labels);
    put("net.layers", std::to_string(net_layers));
    put("net.width", std::to_string(net_width));
    put("net.widths", fmt_list(net_widths));
    put("gate.tau", fmt(gate.tau));
    put("gate.hidden", std::to_string(gate.hidden));
    put("gate.embed_dim", std::to_string(gate.embed_dim));
    put("gate.straight_through", gate.straight_through ? "true" : "false");
    put("gate.k_min", std::to_string(gate.k_min));
    put("score.lambda1", fmt(score.lambda1));
    put("score.lambda2", fmt(score.lambda2));
    put("score.lambda3", fmt(score.lambda3));
    put("score.lambda4", fmt(score.lambda4));
    put("score.lambda_noise", fmt(score.lambda_noise));
    put("score.lambda_corr", fmt(score.lambda_corr));
    put("score.alpha", fmt(score.alpha));
    put("score.buffer_batches", std::to_string(score_buffer_batches));
    put("train.stage1_epochs", std::to_string(train.stage1_epochs));
    put("train.stage2_epochs", std::to_string(train.stage2_epochs));
    put("train.stage3_epochs", std::to_string(train.stage3_epochs));
    put("train.t_samples", std::to_string(train.t_samples));
    put("train.batch_size", std::to_string(train.batch_size));
    put("train.lr_gates", fmt(train.lr_gates));
    put("train.lr_batch_repr", fmt(train.lr_batch_repr));
    put("train.lr_backbone", fmt(train.lr_backbone));
    put("train.constraint_grid", fmt_list(train.constraint_grid));
    put("train.patience", std::to_string(train.patience));
    put("train.w_sparsity", fmt(train.w_sparsity));
    put("train.w_diversity", fmt(train.w_diversity));
    put("train.w_corr", fmt(train.w_corr));
    put("train.w_stability", fmt(train.w_stability));
    put("train.path_drop", train.path_drop ? "true" : "false");
    put("train.path_drop_final_keep", fmt(train.path_drop_final_keep));
    put("train.self_distill", train.self_distill ? "true" : "false");
    put("train.self_distill_weight", fmt(train.self_distill_weight));
    put("train.fix_constraint", train.fix_constraint ? "true" : "false");
    put("train.fixed_constraint", fmt(train.fixed_constraint));
    put("train.gate_feedback", train.log_prob_feedback ? "log_prob" : "straight_through");
    put("train.w_feedback", fmt(train.w_feedback));
    put("sweep.constraints", fmt_list(sweep.constraints));
    put("sweep.seeds", fmt_list(sweep.seeds));
    {
        std::vector<std::string> names;
        for (BaselineKind b : sweep.baselines) names.push_back(baseline_name(b));
        std::string joined;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (i) joined += ',';
            joined += names[i];
        }
        put("sweep.baselines", joined);
    }
    put("sweep.fine_tune", sweep.fine_tune ? "true" : "false");
    put("ablate.constraints", fmt_list(ablate.constraints));
    put("ablate.seeds", fmt_list(ablate.seeds));
    put("sensitivity.seeds", fmt_list(sensitivity_seeds));
    put("sensitivity.constraint", fmt(sensitivity_constraint));
    put("metrics.wall_clock", metrics_wall_clock ? "true" : "false");

    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const std::string& l : lines) {
        out += l;
        out += '\n';
    }
    return out;
}

std::uint64_t ExperimentConfig::hash() const {
    const std::string text = to_text();
    return fnv1a64(text.data(), text.size());
}

std::string ExperimentConfig::run_id() const {
    const std::uint64_t h = hash() ^ (seed * 0x9E3779B97F4A7C15ULL);
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

} // namespace dance
