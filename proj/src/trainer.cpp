#include "dance/trainer.hpp"

#include "dance/errors.hpp"
#include "dance/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace dance {

void TrainConfig::validate() const {
    if (t_samples < 1) throw ValidationError("train: t_samples must be >= 1");
    if (batch_size < 2) throw ValidationError("train: batch_size must be >= 2");
    if (patience < 1) throw ValidationError("train: patience must be >= 1");
    if (constraint_grid.empty()) throw ValidationError("train: constraint grid is empty");
    for (double c : constraint_grid) {
        if (!(c > 0.0) || c > 1.0) {
            throw ValidationError("train: constraint " + std::to_string(c) + " outside (0, 1]");
        }
    }
    if (!(path_drop_final_keep > 0.0) || path_drop_final_keep > 1.0) {
        throw ValidationError("train: path_drop_final_keep outside (0, 1]");
    }
    if (w_sparsity < 0 || w_diversity < 0 || w_corr < 0 || w_stability < 0) {
        throw ValidationError("train: loss weights must be non-negative");
    }
}

RunState init_run_state(const SuperNetConfig& net_cfg, const GateConfig& gate_cfg,
                        std::uint64_t seed, std::size_t buffer_batches) {
    RunState rs;
    rs.net_cfg = net_cfg;
    rs.gate_cfg = gate_cfg;
    rs.rng = RngSet(seed);
    RngStream& init = rs.rng.use(RngUse::init);
    rs.net = SuperNet(net_cfg, init);
    rs.gate = SelectGate(net_cfg, gate_cfg, init);
    const std::vector<std::size_t> widths = net_cfg.layer_widths();
    for (std::size_t l = 0; l < widths.size(); ++l) {
        rs.states.emplace_back(l, widths[l], init, buffer_batches);
    }
    for (std::size_t l = 0; l < widths.size(); ++l) {
        rs.baseline_states.emplace_back(l, widths[l], init, buffer_batches);
    }
    return rs;
}

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Tensor gather_batch(const Split& split, const std::vector<std::size_t>& order,
                    std::size_t offset, std::size_t count, std::vector<int>& labels_out) {
    const std::size_t dim = split.inputs.cols();
    Tensor out = Tensor::zeros({count, dim});
    labels_out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[offset + i];
        for (std::size_t j = 0; j < dim; ++j)
            out.data[i * dim + j] = split.inputs.data[src * dim + j];
        labels_out[i] = split.labels[src];
    }
    return out;
}

// Returns true when training should stop after this epoch.
bool note_validation(TrainState& ts, double val_acc, std::size_t patience) {
    if (val_acc > ts.best_val) {
        ts.best_val = val_acc;
        ts.since_improve = 0;
    } else {
        ts.since_improve += 1;
    }
    return ts.since_improve >= patience;
}

void fill_score_fields(MetricsRecord& rec, const std::vector<ImportanceState>& states,
                       const ScoreWeights& sw) {
    for (const ImportanceState& st : states) {
        const ScoreVector sv = combined_score(st, sw);
        auto mean = [](const std::vector<double>& v) {
            double acc = 0.0;
            for (double x : v) acc += x;
            return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
        };
        rec.layer_mean_score.push_back(mean(sv.values));
        rec.layer_score_static.push_back(mean(sv.stat));
        rec.layer_score_dynamic.push_back(mean(sv.dyn));
        rec.layer_score_feature.push_back(mean(sv.feat));
        rec.layer_score_corr.push_back(mean(sv.corr));
    }
}

} // namespace

double evaluate_accuracy(const SuperNet& net, const std::vector<LayerMask>* masks,
                         const Split& split) {
    if (split.size() == 0) throw InputError("evaluate_accuracy: empty split");
    const SuperNet::PlainForward fw = net.forward_plain(split.inputs, masks);
    const std::size_t n = split.size(), k = fw.logits.cols();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = fw.logits.data.data() + i * k;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (row[j] > row[arg]) arg = j;
        if (static_cast<int>(arg) == split.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double evaluate_accuracy(const SubNet& sub, const Split& split) {
    if (split.size() == 0) throw InputError("evaluate_accuracy: empty split");
    const Tensor logits = sub.forward(split.inputs);
    const std::size_t n = split.size(), k = logits.cols();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data.data() + i * k;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (row[j] > row[arg]) arg = j;
        if (static_cast<int>(arg) == split.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

std::size_t stage1_pretrain(RunState& rs, const Dataset& data, const TrainConfig& cfg,
                            MetricsSink* sink, const std::string& run_id) {
    cfg.validate();
    const std::size_t n = data.train.size();
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t n_batches = std::max<std::size_t>(1, n / batch);

    OptimizerGroup backbone;
    backbone.name = "backbone";
    backbone.params = rs.net.parameters();
    backbone.schedule.peak = cfg.lr_backbone;
    backbone.schedule.total_steps =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.stage1_epochs * n_batches));

    rs.progress = TrainState{};
    const std::vector<std::size_t> widths = rs.net_cfg.layer_widths();

    if (cfg.stage1_epochs == 0) {
        // Zero training steps: record the initial validation accuracy only.
        if (sink) {
            MetricsRecord rec;
            rec.run_id = run_id;
            rec.stage = 1;
            rec.epoch = 0;
            rec.step = rs.progress.global_step;
            rec.val_accuracy = evaluate_accuracy(rs.net, nullptr, data.val);
            rec.layer_k.assign(widths.begin(), widths.end());
            sink->emit(rec);
        }
        rs.completed_stage = std::max(rs.completed_stage, 1);
        return 0;
    }

    std::size_t epochs_run = 0;
    for (std::size_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        const double t0 = now_ms();
        const double ramp = cfg.stage1_epochs > 1
                                ? static_cast<double>(epoch) /
                                      static_cast<double>(cfg.stage1_epochs - 1)
                                : 0.0;
        const double keep_p =
            cfg.path_drop ? 1.0 + (cfg.path_drop_final_keep - 1.0) * ramp : 1.0;

        const std::vector<std::size_t> order = shuffled_indices(n, rs.rng.use(RngUse::shuffle));
        double task_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<int> labels;
            Tensor bx = gather_batch(data.train, order, b * batch, batch, labels);

            std::vector<std::vector<std::uint8_t>> bits;
            std::vector<Var> mask_vars;
            Tape tape;
            Var bx_var = tape.leaf(bx);
            if (cfg.path_drop) {
                RngStream& drop = rs.rng.use(RngUse::path_drop);
                bits.resize(widths.size());
                for (std::size_t l = 0; l < widths.size(); ++l) {
                    bits[l].resize(widths[l]);
                    std::size_t kept = 0;
                    for (std::size_t j = 0; j < widths[l]; ++j) {
                        bits[l][j] = drop.uniform() < keep_p ? 1 : 0;
                        kept += bits[l][j];
                    }
                    if (kept == 0) bits[l][drop.below(widths[l])] = 1;
                    Tensor row = Tensor::zeros({1, widths[l]});
                    for (std::size_t j = 0; j < widths[l]; ++j)
                        row.data[j] = static_cast<double>(bits[l][j]);
                    mask_vars.push_back(tape.leaf(std::move(row)));
                }
            }

            SuperNet::TapeForward fw = rs.net.forward_tape(tape, bx_var, mask_vars);
            Var loss = tape.cross_entropy(fw.logits, labels);
            if (cfg.self_distill && cfg.path_drop) {
                const SuperNet::PlainForward full = rs.net.forward_plain(bx);
                Tensor teacher;
                softmax_rows_into(full.logits, teacher);
                double teacher_xlogx = 0.0;
                for (double p : teacher.data) teacher_xlogx += p > 0.0 ? p * std::log(p) : 0.0;
                teacher_xlogx /= static_cast<double>(batch);
                Var lsm = tape.log_softmax_rows(fw.logits);
                Var cross = tape.scale(tape.sum_all(tape.mul(tape.leaf(teacher), lsm)),
                                       -1.0 / static_cast<double>(batch));
                Var kl = tape.add_scalar(cross, teacher_xlogx);
                loss = tape.add(loss, tape.scale(kl, cfg.self_distill_weight));
            }
            const double loss_value = tape.scalar(loss);
            if (!std::isfinite(loss_value)) {
                throw TrainingError("stage 1: non-finite loss at epoch " + std::to_string(epoch) +
                                    " batch " + std::to_string(b));
            }
            task_sum += loss_value;
            tape.backward(loss);
            backbone.step();
            ++rs.progress.global_step;
        }
        ++epochs_run;

        const double val_acc = evaluate_accuracy(rs.net, nullptr, data.val);
        const bool stop = note_validation(rs.progress, val_acc, cfg.patience);
        if (sink) {
            MetricsRecord rec;
            rec.run_id = run_id;
            rec.stage = 1;
            rec.epoch = epoch + 1;
            rec.step = rs.progress.global_step;
            rec.loss.task = task_sum / static_cast<double>(n_batches);
            rec.loss.total = rec.loss.task;
            rec.val_accuracy = val_acc;
            rec.layer_k.assign(widths.begin(), widths.end());
            rec.wall_ms = now_ms() - t0;
            sink->emit(rec);
        }
        if (stop) break;
    }
    rs.progress.epoch = 0;
    rs.progress.since_improve = 0;
    rs.progress.best_val = -1.0;
    rs.completed_stage = std::max(rs.completed_stage, 1);
    return epochs_run;
}

Var total_loss_var(Tape& tape, Var task, const std::vector<GateOutput>& layer_outputs,
                   const std::vector<double>& constraints,
                   const std::vector<ImportanceState>& states, const TrainConfig& cfg,
                   double progress, LossBreakdown* breakdown) {
    if (layer_outputs.size() != constraints.size()) {
        throw DimensionError("total_loss: one constraint per gate output required");
    }
    const double w_sp = cfg.w_sparsity * progress;

    Var total = task;
    double sparsity_num = 0.0;
    double diversity_num = 0.0;
    if (!layer_outputs.empty()) {
        Var sp{};
        Var dv{};
        bool first = true;
        for (std::size_t l = 0; l < layer_outputs.size(); ++l) {
            const Var p = layer_outputs[l].probs_var;
            const std::size_t w = layer_outputs[l].probs.size();
            Var sp_l = tape.abs(tape.add_scalar(tape.mean_all(p), -constraints[l]));
            Var dv_l = tape.add_scalar(tape.sum_all(tape.xlogx(p)),
                                       std::log(static_cast<double>(w)));
            if (first) {
                sp = sp_l;
                dv = dv_l;
                first = false;
            } else {
                sp = tape.add(sp, sp_l);
                dv = tape.add(dv, dv_l);
            }
        }
        Var sp_w = tape.scale(sp, w_sp);
        Var dv_w = tape.scale(dv, cfg.w_diversity);
        sparsity_num = tape.scalar(sp_w);
        diversity_num = tape.scalar(dv_w);
        total = tape.add(total, sp_w);
        total = tape.add(total, dv_w);
    }

    double corr_num = 0.0;
    double stab_num = 0.0;
    if (!states.empty()) {
        double corr_acc = 0.0;
        double stab_acc = 0.0;
        for (const ImportanceState& st : states) {
            corr_acc += st.mean_abs_correlation();
            stab_acc += st.last_update_l1();
        }
        corr_num = cfg.w_corr * corr_acc / static_cast<double>(states.size());
        stab_num = cfg.w_stability * stab_acc;
        total = tape.add_scalar(total, corr_num);
        total = tape.add_scalar(total, stab_num);
    }

    if (breakdown) {
        breakdown->task = tape.scalar(task);
        breakdown->sparsity = sparsity_num;
        breakdown->diversity = diversity_num;
        breakdown->correlation = corr_num;
        breakdown->stability = stab_num;
        breakdown->total = tape.scalar(total);
    }
    return total;
}

std::vector<LayerMask> deployment_masks(RunState& rs, const ScoreWeights& sw, const Tensor& probe,
                                        double constraint) {
    Tape tape;
    Var probe_var = tape.leaf(probe);
    Var embedding = rs.gate.batch_repr(tape, probe_var);
    const SuperNet::PlainForward full = rs.net.forward_plain(probe);
    std::vector<LayerMask> masks;
    RngStream& eval = rs.rng.use(RngUse::eval);
    for (std::size_t l = 0; l < rs.net.num_layers(); ++l) {
        const Tensor summary = layer_features(full.activations[l]);
        Var score = combined_score_var(tape, rs.states[l], sw);
        GateOutput go = select_gate_layer(tape, rs.gate, embedding, summary, l, constraint, score,
                                          eval, eval, /*training=*/false);
        masks.push_back(std::move(go.mask));
    }
    return masks;
}

namespace {

Tensor probe_from(const Split& split, std::size_t batch_size) {
    const std::size_t n = std::min(batch_size, split.size());
    if (n < 2) throw InputError("probe batch: need at least 2 rows");
    return split.batch(0, n);
}

double stage2_validation(RunState& rs, const ScoreWeights& sw, const TrainConfig& cfg,
                         const Dataset& data) {
    const Split& probe_split = data.val.size() >= 2 ? data.val : data.train;
    const Tensor probe = probe_from(probe_split, cfg.batch_size);
    double acc = 0.0;
    for (double c : cfg.constraint_grid) {
        const std::vector<LayerMask> masks = deployment_masks(rs, sw, probe, c);
        acc += evaluate_accuracy(rs.net, &masks, data.val.size() ? data.val : data.train);
    }
    return acc / static_cast<double>(cfg.constraint_grid.size());
}

} // namespace

std::size_t stage2_distribution_learning(RunState& rs, const Dataset& data,
                                         const TrainConfig& cfg, const ScoreWeights& sw,
                                         MetricsSink* sink, const std::string& run_id,
                                         long halt_after_epoch) {
    cfg.validate();
    sw.validate();
    if (rs.completed_stage < 1) throw StateError("stage 2 requires a completed stage 1");

    const std::size_t n = data.train.size();
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t n_batches = std::max<std::size_t>(1, n / batch);
    const std::size_t num_layers = rs.net.num_layers();
    const std::int64_t total_steps =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.stage2_epochs * n_batches));

    OptimizerGroup gates;
    gates.name = "gates";
    gates.params = rs.gate.gate_parameters();
    for (ImportanceState& st : rs.states) {
        gates.params.push_back(&st.static_logits());
        gates.params.push_back(&st.fusion_weights());
    }
    gates.schedule.peak = cfg.lr_gates;
    gates.schedule.total_steps = total_steps;

    OptimizerGroup repr;
    repr.name = "batch_repr";
    repr.params = rs.gate.repr_parameters();
    repr.schedule.peak = cfg.lr_batch_repr;
    repr.schedule.total_steps = total_steps;

    OptimizerGroup backbone;
    backbone.name = "backbone";
    backbone.params = rs.net.parameters();
    backbone.schedule.peak = cfg.lr_backbone;
    backbone.schedule.total_steps = total_steps;

    // Resume from a checkpointed epoch boundary.
    const std::size_t start_epoch = rs.progress.epoch;
    const std::int64_t resumed_steps = static_cast<std::int64_t>(start_epoch * n_batches);
    gates.step_index = resumed_steps;
    repr.step_index = resumed_steps;
    backbone.step_index = resumed_steps;

    std::size_t epochs_run = 0;
    for (std::size_t epoch = start_epoch; epoch < cfg.stage2_epochs; ++epoch) {
        const double t0 = now_ms();
        const std::vector<std::size_t> order = shuffled_indices(n, rs.rng.use(RngUse::shuffle));
        LossBreakdown epoch_loss;
        std::size_t identical_batches = 0;
        std::vector<std::size_t> last_k(num_layers, 0);

        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<int> labels;
            Tensor bx = gather_batch(data.train, order, b * batch, batch, labels);

            // Unmasked pass for the layer summaries; detached gate input.
            const SuperNet::PlainForward full = rs.net.forward_plain(bx);
            std::vector<Tensor> summaries;
            summaries.reserve(num_layers);
            for (std::size_t l = 0; l < num_layers; ++l)
                summaries.push_back(layer_features(full.activations[l]));

            Tape tape;
            Var bx_var = tape.leaf(bx);
            Var embedding = rs.gate.batch_repr(tape, bx_var);
            std::vector<Var> scores;
            scores.reserve(num_layers);
            for (std::size_t l = 0; l < num_layers; ++l)
                scores.push_back(combined_score_var(tape, rs.states[l], sw));

            const double progress =
                static_cast<double>(epoch * n_batches + b) / static_cast<double>(total_steps);

            Var sum_total{};
            LossBreakdown batch_loss;
            bool masks_identical = true;
            std::vector<std::vector<std::uint8_t>> first_mask_bits;
            std::vector<Var> last_sample_acts(num_layers);
            double feedback_value = 0.0;
            Var feedback_term{};
            bool have_feedback = false;

            for (std::size_t s = 0; s < cfg.t_samples; ++s) {
                double c = cfg.fixed_constraint;
                if (!cfg.fix_constraint) {
                    c = cfg.constraint_grid[static_cast<std::size_t>(
                        rs.rng.use(RngUse::sampling).below(cfg.constraint_grid.size()))];
                }
                std::vector<GateOutput> outputs;
                std::vector<Var> mask_vars;
                outputs.reserve(num_layers);
                double sample_logprob = 0.0;
                for (std::size_t l = 0; l < num_layers; ++l) {
                    GateOutput go = select_gate_layer(
                        tape, rs.gate, embedding, summaries[l], l, c, scores[l],
                        rs.rng.use(RngUse::gate_noise), rs.rng.use(RngUse::sampling),
                        /*training=*/true);
                    const std::size_t want = std::max<std::size_t>(
                        rs.gate.config().k_min,
                        retain_count_for(c, rs.net.layer_width(l)));
                    if (go.mask.retained != want) {
                        throw TrainingError("stage 2: sampled mask violates its constraint");
                    }
                    sample_logprob += go.log_prob;
                    mask_vars.push_back(go.mask_var);
                    outputs.push_back(std::move(go));
                }

                if (s == 0) {
                    first_mask_bits.clear();
                    for (const GateOutput& go : outputs) first_mask_bits.push_back(go.mask.bits);
                } else if (masks_identical) {
                    for (std::size_t l = 0; l < num_layers; ++l) {
                        if (outputs[l].mask.bits != first_mask_bits[l]) {
                            masks_identical = false;
                            break;
                        }
                    }
                }

                SuperNet::TapeForward fw = rs.net.forward_tape(tape, bx_var, mask_vars);
                Var task = tape.cross_entropy(fw.logits, labels);
                std::vector<double> constraints(num_layers, c);
                LossBreakdown bd;
                Var total =
                    total_loss_var(tape, task, outputs, constraints, rs.states, cfg, progress, &bd);
                batch_loss.task += bd.task;
                batch_loss.sparsity += bd.sparsity;
                batch_loss.diversity += bd.diversity;
                batch_loss.correlation += bd.correlation;
                batch_loss.stability += bd.stability;
                batch_loss.total += bd.total;
                sum_total = (s == 0) ? total : tape.add(sum_total, total);

                if (cfg.log_prob_feedback) {
                    // Score-function term: advantage-weighted log-probability
                    // of the drawn masks. Kept out of the logged breakdown.
                    const double advantage = bd.task - rs.progress.feedback_baseline;
                    Var logp{};
                    bool first_lp = true;
                    for (std::size_t l = 0; l < num_layers; ++l) {
                        Var lp_l = tape.sum_all(
                            tape.mul(outputs[l].mask_var, tape.log(outputs[l].probs_var)));
                        logp = first_lp ? lp_l : tape.add(logp, lp_l);
                        first_lp = false;
                    }
                    Var term = tape.scale(logp, cfg.w_feedback * advantage);
                    feedback_term = have_feedback ? tape.add(feedback_term, term) : term;
                    have_feedback = true;
                    feedback_value += bd.task;
                }

                for (std::size_t l = 0; l < num_layers; ++l) {
                    last_sample_acts[l] = fw.activations[l];
                    last_k[l] = outputs[l].mask.retained;
                }
            }

            const double inv_t = 1.0 / static_cast<double>(cfg.t_samples);
            Var objective = tape.scale(sum_total, inv_t);
            if (have_feedback) objective = tape.add(objective, tape.scale(feedback_term, inv_t));

            batch_loss.task *= inv_t;
            batch_loss.sparsity *= inv_t;
            batch_loss.diversity *= inv_t;
            batch_loss.correlation *= inv_t;
            batch_loss.stability *= inv_t;
            batch_loss.total *= inv_t;
            if (!std::isfinite(batch_loss.total)) {
                throw TrainingError("stage 2: non-finite loss at epoch " + std::to_string(epoch) +
                                    " batch " + std::to_string(b));
            }
            if (masks_identical && cfg.t_samples > 1) ++identical_batches;

            tape.backward(objective);
            gates.step();
            repr.step();
            backbone.step();
            ++rs.progress.global_step;
            if (cfg.log_prob_feedback) {
                rs.progress.feedback_baseline =
                    0.9 * rs.progress.feedback_baseline + 0.1 * feedback_value * inv_t;
            }

            epoch_loss.task += batch_loss.task;
            epoch_loss.sparsity += batch_loss.sparsity;
            epoch_loss.diversity += batch_loss.diversity;
            epoch_loss.correlation += batch_loss.correlation;
            epoch_loss.stability += batch_loss.stability;
            epoch_loss.total += batch_loss.total;

            // Importance trackers update once per batch, from the last
            // sample's masked activations; the gate-detached baseline set
            // updates from the unmasked activations of the same batch.
            for (std::size_t l = 0; l < num_layers; ++l) {
                const Tensor& acts = tape.value(last_sample_acts[l]);
                const Tensor summary = layer_features(acts);
                rs.states[l].dynamic_update(summary, acts.rows(), sw,
                                            rs.rng.use(RngUse::score_noise));
                rs.states[l].feature_update(acts, sw);
                rs.states[l].push_activations(acts);

                rs.baseline_states[l].dynamic_update(summaries[l], full.activations[l].rows(), sw,
                                                     rs.rng.use(RngUse::baseline_score_noise));
                rs.baseline_states[l].feature_update(full.activations[l], sw);
                rs.baseline_states[l].push_activations(full.activations[l]);
            }
        }

        rs.progress.epoch = epoch + 1;
        ++epochs_run;
        const double val_acc = stage2_validation(rs, sw, cfg, data);
        const bool stop = note_validation(rs.progress, val_acc, cfg.patience);

        if (sink) {
            const double inv_b = 1.0 / static_cast<double>(n_batches);
            MetricsRecord rec;
            rec.run_id = run_id;
            rec.stage = 2;
            rec.epoch = epoch + 1;
            rec.step = rs.progress.global_step;
            rec.loss.task = epoch_loss.task * inv_b;
            rec.loss.sparsity = epoch_loss.sparsity * inv_b;
            rec.loss.diversity = epoch_loss.diversity * inv_b;
            rec.loss.correlation = epoch_loss.correlation * inv_b;
            rec.loss.stability = epoch_loss.stability * inv_b;
            rec.loss.total = epoch_loss.total * inv_b;
            rec.val_accuracy = val_acc;
            rec.layer_k = last_k;
            rec.diversity_collapse =
                cfg.t_samples > 1 &&
                identical_batches * 10 > n_batches * 9;
            fill_score_fields(rec, rs.states, sw);
            rec.wall_ms = now_ms() - t0;
            sink->emit(rec);
        }

        if (halt_after_epoch > 0 && rs.progress.epoch >= static_cast<std::uint64_t>(halt_after_epoch)) {
            return epochs_run;
        }
        if (stop) break;
    }

    rs.completed_stage = std::max(rs.completed_stage, 2);
    rs.progress.epoch = 0;
    rs.progress.since_improve = 0;
    rs.progress.best_val = -1.0;
    return epochs_run;
}

Stage3Result stage3_finetune(RunState& rs, const Dataset& data, double constraint,
                             const TrainConfig& cfg, const ScoreWeights& sw, MetricsSink* sink,
                             const std::string& run_id) {
    cfg.validate();
    if (rs.completed_stage < 2) throw StateError("stage 3 requires a completed stage 2");
    if (!(constraint > 0.0) || constraint > 1.0) {
        throw RangeError("stage 3: constraint " + std::to_string(constraint) + " outside (0, 1]");
    }

    Stage3Result result;
    const Tensor probe = probe_from(data.train, cfg.batch_size);
    result.masks = deployment_masks(rs, sw, probe, constraint);
    result.subnet = extract_subnet(rs.net, result.masks);
    result.subnet.constraint.assign(rs.net.num_layers(), constraint);
    result.subnet.seed = rs.rng.seed();

    const Split& val = data.val.size() ? data.val : data.train;
    result.pre_finetune_accuracy = evaluate_accuracy(result.subnet, val);

    // Wrap the compact slices as trainable parameters.
    std::vector<Parameter> weights, biases;
    for (const Tensor& w : result.subnet.weights) weights.emplace_back(w);
    for (const Tensor& b : result.subnet.biases) biases.emplace_back(b);
    Parameter head_w(result.subnet.head_weight);
    Parameter head_b(result.subnet.head_bias);

    const std::size_t n = data.train.size();
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t n_batches = std::max<std::size_t>(1, n / batch);

    OptimizerGroup group;
    group.name = "subnet";
    for (Parameter& p : weights) group.params.push_back(&p);
    for (Parameter& p : biases) group.params.push_back(&p);
    group.params.push_back(&head_w);
    group.params.push_back(&head_b);
    group.schedule.peak = cfg.lr_backbone;
    group.schedule.total_steps =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.stage3_epochs * n_batches));

    auto subnet_forward = [&](Tape& tape, Var bx) {
        Var h = bx;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            h = tape.relu(tape.add_row(tape.matmul(h, tape.param(weights[l])),
                                       tape.param(biases[l])));
        }
        return tape.add_row(tape.matmul(h, tape.param(head_w)), tape.param(head_b));
    };
    auto sync_subnet = [&]() {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            result.subnet.weights[l] = weights[l].value;
            result.subnet.biases[l] = biases[l].value;
        }
        result.subnet.head_weight = head_w.value;
        result.subnet.head_bias = head_b.value;
    };

    TrainState ts;
    for (std::size_t epoch = 0; epoch < cfg.stage3_epochs; ++epoch) {
        const double t0 = now_ms();
        const std::vector<std::size_t> order = shuffled_indices(n, rs.rng.use(RngUse::shuffle));
        double task_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<int> labels;
            Tensor bx = gather_batch(data.train, order, b * batch, batch, labels);
            Tape tape;
            Var loss = tape.cross_entropy(subnet_forward(tape, tape.leaf(bx)), labels);
            const double loss_value = tape.scalar(loss);
            if (!std::isfinite(loss_value)) {
                throw TrainingError("stage 3: non-finite loss at epoch " + std::to_string(epoch));
            }
            task_sum += loss_value;
            tape.backward(loss);
            group.step();
            ++rs.progress.global_step;
        }
        sync_subnet();
        const double val_acc = evaluate_accuracy(result.subnet, val);
        const bool stop = note_validation(ts, val_acc, cfg.patience);
        if (sink) {
            MetricsRecord rec;
            rec.run_id = run_id;
            rec.stage = 3;
            rec.epoch = epoch + 1;
            rec.step = rs.progress.global_step;
            rec.loss.task = task_sum / static_cast<double>(n_batches);
            rec.loss.total = rec.loss.task;
            rec.val_accuracy = val_acc;
            for (const LayerMask& m : result.masks) rec.layer_k.push_back(m.retained);
            fill_score_fields(rec, rs.states, sw);
            rec.wall_ms = now_ms() - t0;
            sink->emit(rec);
        }
        if (stop) break;
    }

    sync_subnet();
    result.final_accuracy = evaluate_accuracy(result.subnet, val);
    scatter_subnet(rs.net, result.subnet);
    rs.completed_stage = std::max(rs.completed_stage, 3);
    return result;
}

} // namespace dance
