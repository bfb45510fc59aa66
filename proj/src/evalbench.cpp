#include "dance/evalbench.hpp"

#include "dance/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dance {

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

} // namespace

std::string baseline_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::dance: return "dance";
        case BaselineKind::score_based_pruning: return "score_based_pruning";
        case BaselineKind::random_mask: return "random_mask";
    }
    throw RangeError("unknown baseline kind");
}

BaselineKind baseline_from_name(const std::string& name) {
    if (name == "dance") return BaselineKind::dance;
    if (name == "score_based_pruning") return BaselineKind::score_based_pruning;
    if (name == "random_mask") return BaselineKind::random_mask;
    throw ValidationError("unknown baseline '" + name + "'");
}

void SweepSpec::validate() const {
    if (constraints.empty()) throw ValidationError("sweep: constraint list is empty");
    if (seeds.empty()) throw ValidationError("sweep: seed list is empty");
    for (double c : constraints) {
        if (!(c > 0.0) || c > 1.0) {
            throw ValidationError("sweep: constraint " + std::to_string(c) + " outside (0, 1]");
        }
    }
}

std::vector<double> fine_grid() {
    std::vector<double> g;
    for (int i = 5; i <= 25; ++i) g.push_back(static_cast<double>(i) / 50.0);
    return g;
}

std::vector<double> coarse_grid() { return {0.5, 0.6, 0.7, 0.8, 0.9}; }

std::vector<double> ablation_grid() { return {0.9, 0.8, 0.7, 0.6, 0.5}; }

std::vector<SweepAggregate> SweepResult::aggregate() const {
    std::vector<SweepAggregate> out;
    for (const SweepCell& c : cells) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SweepAggregate& a) {
            return a.baseline == c.baseline && a.constraint == c.constraint;
        });
        if (it == out.end()) {
            out.push_back({c.baseline, c.constraint, 0.0, 0.0});
        }
    }
    for (SweepAggregate& a : out) {
        std::vector<double> accs;
        for (const SweepCell& c : cells)
            if (c.baseline == a.baseline && c.constraint == a.constraint)
                accs.push_back(c.accuracy);
        double mean = 0.0;
        for (double v : accs) mean += v;
        mean /= static_cast<double>(accs.size());
        double var = 0.0;
        for (double v : accs) var += (v - mean) * (v - mean);
        a.mean_accuracy = mean;
        a.std_accuracy = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1))
                                         : 0.0;
    }
    return out;
}

double SweepResult::mean_accuracy(BaselineKind kind, double constraint) const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const SweepCell& c : cells) {
        if (c.baseline == kind && std::fabs(c.constraint - constraint) < 1e-12) {
            acc += c.accuracy;
            ++n;
        }
    }
    if (n == 0) throw RangeError("sweep: no cells for requested (baseline, constraint)");
    return acc / static_cast<double>(n);
}

std::vector<LayerMask> score_based_prune(const SuperNet& net,
                                         const std::vector<ImportanceState>& states,
                                         const ScoreWeights& weights, double constraint) {
    if (states.size() != net.num_layers()) {
        throw DimensionError("score_based_prune: one importance state per layer required");
    }
    std::vector<LayerMask> masks;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        const ScoreVector sv = combined_score(states[l], weights);
        const std::size_t k = retain_count_for(constraint, net.layer_width(l));
        masks.push_back(top_k_mask(sv.values, l, k));
    }
    return masks;
}

LayerMask random_mask(std::size_t width, std::size_t k, RngStream& rng, std::size_t layer) {
    if (k < 1 || k > width) {
        throw RangeError("random_mask: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(width) + "]");
    }
    std::vector<std::size_t> idx(width);
    std::iota(idx.begin(), idx.end(), 0);
    // Fisher-Yates prefix of length k.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(width - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<std::uint8_t> bits(width, 0);
    for (std::size_t i = 0; i < k; ++i) bits[idx[i]] = 1;
    return LayerMask(layer, std::move(bits));
}

namespace {

Tensor probe_batch_for_seed(const Split& split, std::size_t batch_size, std::uint64_t seed) {
    const std::size_t n = split.size();
    const std::size_t count = std::min(batch_size, n);
    if (count < 2) throw InputError("sweep probe: need at least 2 rows");
    RngStream pick(seed, static_cast<std::uint64_t>(RngUse::eval));
    Tensor out = Tensor::zeros({count, split.inputs.cols()});
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = static_cast<std::size_t>(pick.below(n));
        for (std::size_t j = 0; j < split.inputs.cols(); ++j)
            out.data[i * split.inputs.cols() + j] = split.inputs.data[src * split.inputs.cols() + j];
    }
    return out;
}

} // namespace

SweepResult sweep_constraints(const SweepSpec& spec, const RunState& trained,
                              const Dataset& data, const TrainConfig& cfg,
                              const ScoreWeights& sw) {
    spec.validate();
    if (trained.completed_stage < 2) {
        throw StateError("sweep_constraints: stage-2 artifacts required");
    }
    SweepResult result;
    for (BaselineKind kind : spec.baselines) {
        for (double c : spec.constraints) {
            for (std::uint64_t seed : spec.seeds) {
                const double t0 = now_ms();
                RunState rs = trained;   // frozen artifacts; cells never share mutations
                std::vector<LayerMask> masks;
                switch (kind) {
                    case BaselineKind::dance: {
                        const Tensor probe =
                            probe_batch_for_seed(data.train, cfg.batch_size, seed);
                        masks = deployment_masks(rs, sw, probe, c);
                        break;
                    }
                    case BaselineKind::score_based_pruning:
                        masks = score_based_prune(rs.net, rs.baseline_states, sw, c);
                        break;
                    case BaselineKind::random_mask: {
                        RngStream rng(seed, static_cast<std::uint64_t>(RngUse::sampling));
                        for (std::size_t l = 0; l < rs.net.num_layers(); ++l) {
                            const std::size_t k = retain_count_for(c, rs.net.layer_width(l));
                            masks.push_back(random_mask(rs.net.layer_width(l), k, rng, l));
                        }
                        break;
                    }
                }
                SweepCell cell;
                cell.baseline = kind;
                cell.constraint = c;
                cell.seed = seed;
                cell.params = count_params(rs.net, &masks);
                cell.flops = count_flops(rs.net, &masks);
                if (spec.fine_tune) {
                    SubNet sub = extract_subnet(rs.net, masks);
                    TrainConfig ft = cfg;
                    // Reuse the stage-3 loop by letting the trainer see the
                    // masks through a cloned run state.
                    std::vector<Parameter> weights, biases;
                    for (const Tensor& w : sub.weights) weights.emplace_back(w);
                    for (const Tensor& b : sub.biases) biases.emplace_back(b);
                    Parameter head_w(sub.head_weight), head_b(sub.head_bias);
                    OptimizerGroup group;
                    for (Parameter& p : weights) group.params.push_back(&p);
                    for (Parameter& p : biases) group.params.push_back(&p);
                    group.params.push_back(&head_w);
                    group.params.push_back(&head_b);
                    const std::size_t n = data.train.size();
                    const std::size_t batch = std::min(ft.batch_size, n);
                    const std::size_t n_batches = std::max<std::size_t>(1, n / batch);
                    group.schedule.peak = ft.lr_backbone;
                    group.schedule.total_steps = std::max<std::int64_t>(
                        1, static_cast<std::int64_t>(ft.stage3_epochs * n_batches));
                    RngStream shuffle(seed, static_cast<std::uint64_t>(RngUse::shuffle));
                    for (std::size_t epoch = 0; epoch < ft.stage3_epochs; ++epoch) {
                        std::vector<std::size_t> order(n);
                        std::iota(order.begin(), order.end(), 0);
                        for (std::size_t i = n; i > 1; --i) {
                            const std::size_t j = static_cast<std::size_t>(shuffle.below(i));
                            std::swap(order[i - 1], order[j]);
                        }
                        for (std::size_t b = 0; b < n_batches; ++b) {
                            Tensor bx = Tensor::zeros({batch, data.train.inputs.cols()});
                            std::vector<int> labels(batch);
                            for (std::size_t i = 0; i < batch; ++i) {
                                const std::size_t src = order[b * batch + i];
                                for (std::size_t j = 0; j < bx.cols(); ++j)
                                    bx.data[i * bx.cols() + j] =
                                        data.train.inputs.data[src * bx.cols() + j];
                                labels[i] = data.train.labels[src];
                            }
                            Tape tape;
                            Var h = tape.leaf(bx);
                            for (std::size_t l = 0; l < weights.size(); ++l)
                                h = tape.relu(tape.add_row(tape.matmul(h, tape.param(weights[l])),
                                                           tape.param(biases[l])));
                            Var logits =
                                tape.add_row(tape.matmul(h, tape.param(head_w)), tape.param(head_b));
                            Var loss = tape.cross_entropy(logits, labels);
                            tape.backward(loss);
                            group.step();
                        }
                    }
                    for (std::size_t l = 0; l < weights.size(); ++l) {
                        sub.weights[l] = weights[l].value;
                        sub.biases[l] = biases[l].value;
                    }
                    sub.head_weight = head_w.value;
                    sub.head_bias = head_b.value;
                    cell.accuracy = evaluate_accuracy(sub, data.test);
                } else {
                    cell.accuracy = evaluate_accuracy(rs.net, &masks, data.test);
                }
                cell.wall_ms = now_ms() - t0;
                result.cells.push_back(cell);
            }
        }
    }
    return result;
}

void write_sweep_csv(const std::string& path, const SweepResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "baseline,constraint,seed,accuracy,params,flops,wall_ms\n";
    for (const SweepCell& c : result.cells) {
        out << baseline_name(c.baseline) << ',' << c.constraint << ',' << c.seed << ','
            << c.accuracy << ',' << c.params << ',' << c.flops << ',' << c.wall_ms << '\n';
    }
}

std::string ablation_mode_name(AblationMode mode) {
    switch (mode) {
        case AblationMode::all: return "default";
        case AblationMode::only_static: return "only_static";
        case AblationMode::only_dynamic: return "only_dynamic";
        case AblationMode::only_feature: return "only_feature";
        case AblationMode::only_corr: return "only_corr";
    }
    throw RangeError("unknown ablation mode");
}

ScoreWeights ablation_weights(const ScoreWeights& base, AblationMode mode) {
    ScoreWeights w = base;
    switch (mode) {
        case AblationMode::all: break;
        case AblationMode::only_static: w.lambda2 = w.lambda3 = w.lambda4 = 0.0; break;
        case AblationMode::only_dynamic: w.lambda1 = w.lambda3 = w.lambda4 = 0.0; break;
        case AblationMode::only_feature: w.lambda1 = w.lambda2 = w.lambda4 = 0.0; break;
        case AblationMode::only_corr: w.lambda1 = w.lambda2 = w.lambda3 = 0.0; break;
    }
    w.validate();
    return w;
}

double AblationResult::mean_accuracy(AblationMode mode, double constraint) const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const AblationCell& c : cells) {
        if (c.mode == mode && std::fabs(c.constraint - constraint) < 1e-12) {
            acc += c.accuracy;
            ++n;
        }
    }
    if (n == 0) throw RangeError("ablation: no cells for requested (mode, constraint)");
    return acc / static_cast<double>(n);
}

AblationResult ablation_run(const AblationSpec& spec, const SuperNetConfig& net_cfg,
                            const GateConfig& gate_cfg, const ScoreWeights& base_weights,
                            const TrainConfig& cfg, const DatasetSpec& data_spec) {
    if (spec.modes.empty() || spec.constraints.empty() || spec.seeds.empty()) {
        throw ValidationError("ablation: modes, constraints, and seeds must be non-empty");
    }
    AblationResult result;
    for (std::uint64_t seed : spec.seeds) {
        RngStream data_rng(seed, static_cast<std::uint64_t>(RngUse::data));
        const Dataset data = generate_synthetic(data_spec, data_rng);
        RunState pretrained = init_run_state(net_cfg, gate_cfg, seed);
        stage1_pretrain(pretrained, data, cfg, nullptr, "ablate");
        for (AblationMode mode : spec.modes) {
            const ScoreWeights sw = ablation_weights(base_weights, mode);
            RunState rs = pretrained;   // shared stage-1 start per seed
            stage2_distribution_learning(rs, data, cfg, sw, nullptr, "ablate");
            const Tensor probe = probe_batch_for_seed(data.train, cfg.batch_size, seed);
            for (double c : spec.constraints) {
                const std::vector<LayerMask> masks = deployment_masks(rs, sw, probe, c);
                AblationCell cell;
                cell.mode = mode;
                cell.constraint = c;
                cell.seed = seed;
                cell.accuracy = evaluate_accuracy(rs.net, &masks, data.test);
                result.cells.push_back(cell);
            }
        }
    }
    return result;
}

void write_ablation_csv(const std::string& path, const AblationResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "mode,constraint,seed,accuracy\n";
    for (const AblationCell& c : result.cells) {
        out << ablation_mode_name(c.mode) << ',' << c.constraint << ',' << c.seed << ','
            << c.accuracy << '\n';
    }
}

std::string sensitivity_axis_name(SensitivityAxis axis) {
    switch (axis) {
        case SensitivityAxis::batch_size: return "batch_size";
        case SensitivityAxis::alpha: return "alpha";
        case SensitivityAxis::lambda_corr: return "lambda_corr";
        case SensitivityAxis::tau: return "tau";
    }
    throw RangeError("unknown sensitivity axis");
}

SensitivityAxis sensitivity_axis_from_name(const std::string& name) {
    if (name == "batch_size") return SensitivityAxis::batch_size;
    if (name == "alpha") return SensitivityAxis::alpha;
    if (name == "lambda_corr") return SensitivityAxis::lambda_corr;
    if (name == "tau") return SensitivityAxis::tau;
    throw ValidationError("unknown sensitivity axis '" + name + "'");
}

std::vector<double> default_sensitivity_grid(SensitivityAxis axis) {
    switch (axis) {
        case SensitivityAxis::batch_size: return {8, 16, 32, 64, 128};
        case SensitivityAxis::alpha: return {0.05, 0.1, 0.3, 0.5, 1.0};
        case SensitivityAxis::lambda_corr: return {0.1, 0.25, 0.5, 0.75, 1.0};
        case SensitivityAxis::tau: return {0.1, 0.5, 1.0};
    }
    throw RangeError("unknown sensitivity axis");
}

SensitivityResult sensitivity_sweep(SensitivityAxis axis, const std::vector<double>& grid,
                                    const SuperNetConfig& net_cfg, const GateConfig& gate_cfg,
                                    const ScoreWeights& sw, const TrainConfig& cfg,
                                    const DatasetSpec& data_spec,
                                    const std::vector<std::uint64_t>& seeds,
                                    double reference_constraint) {
    if (grid.empty()) throw ValidationError("sensitivity: grid is empty");
    if (seeds.empty()) throw ValidationError("sensitivity: seeds are empty");
    SensitivityResult result;
    result.axis = axis;
    for (std::uint64_t seed : seeds) {
        RngStream data_rng(seed, static_cast<std::uint64_t>(RngUse::data));
        const Dataset data = generate_synthetic(data_spec, data_rng);
        RunState pretrained = init_run_state(net_cfg, gate_cfg, seed);
        stage1_pretrain(pretrained, data, cfg, nullptr, "sensitivity");
        for (double value : grid) {
            ScoreWeights sw_v = sw;
            TrainConfig cfg_v = cfg;
            GateConfig gate_v = gate_cfg;
            switch (axis) {
                case SensitivityAxis::batch_size:
                    cfg_v.batch_size = static_cast<std::size_t>(value);
                    break;
                case SensitivityAxis::alpha: sw_v.alpha = value; break;
                case SensitivityAxis::lambda_corr: sw_v.lambda_corr = value; break;
                case SensitivityAxis::tau: gate_v.tau = value; break;
            }
            RunState rs = pretrained;
            if (axis == SensitivityAxis::tau) {
                rs.gate_cfg.tau = value;
                rs.gate.set_temperature(value);
            }
            stage2_distribution_learning(rs, data, cfg_v, sw_v, nullptr, "sensitivity");
            const Tensor probe =
                probe_batch_for_seed(data.train, cfg_v.batch_size, seed);
            const std::vector<LayerMask> masks =
                deployment_masks(rs, sw_v, probe, reference_constraint);
            SensitivityCell cell;
            cell.value = value;
            cell.seed = seed;
            cell.accuracy = evaluate_accuracy(rs.net, &masks, data.test);
            cell.params = count_params(rs.net, &masks);
            result.cells.push_back(cell);
        }
    }
    return result;
}

void write_sensitivity_csv(const std::string& path, const SensitivityResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "value,seed,accuracy,params\n";
    for (const SensitivityCell& c : result.cells) {
        out << c.value << ',' << c.seed << ',' << c.accuracy << ',' << c.params << '\n';
    }
}

} // namespace dance
