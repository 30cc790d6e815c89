#include "xmodal/transfer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numeric>
#include <set>

#include "xmodal/optim.hpp"
#include "xmodal/pseudo_label.hpp"

namespace xmodal {

namespace {

// Sub-stream tags for the engine's independent RNG streams. Keeping the
// streams separate means toggling one loss on or off cannot shift the
// batches any other loss sees.
enum : std::uint64_t {
    kTagModelInit = 1,
    kTagSourceBatches = 2,
    kTagTargetBatches = 11,
    kTagTiBatches = 12,
    kTagTiSourceBatches = 13,
    kTagDiscInit = 14,
};

// Shuffled cycling without replacement; incomplete tail batches are folded
// into the next reshuffle so every batch has the same size.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, Rng rng)
        : rng_(rng), batch_(std::min(batch, n)), deck_(n), pos_(n) {
        std::iota(deck_.begin(), deck_.end(), std::size_t{0});
    }

    std::size_t batch_size() const { return batch_; }

    std::vector<std::size_t> next() {
        if (pos_ + batch_ > deck_.size()) {
            rng_.shuffle(deck_);
            pos_ = 0;
        }
        std::vector<std::size_t> out(deck_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     deck_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
        pos_ += batch_;
        return out;
    }

private:
    Rng rng_;
    std::size_t batch_;
    std::vector<std::size_t> deck_;
    std::size_t pos_;
};

std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

std::vector<std::vector<double>> classifier_bytes(std::vector<SourceModel>& models) {
    std::vector<std::vector<double>> out;
    for (auto& m : models) {
        for (auto& p : classifier_params(m)) {
            auto v = p.values();
            out.emplace_back(v.begin(), v.end());
        }
    }
    return out;
}

void check_classifiers_unchanged(std::vector<SourceModel>& models,
                                 const std::vector<std::vector<double>>& before) {
    std::size_t slot = 0;
    for (auto& m : models) {
        for (auto& p : classifier_params(m)) {
            auto v = p.values();
            if (before[slot].size() != v.size() ||
                std::memcmp(before[slot].data(), v.data(), v.size() * sizeof(double)) != 0) {
                throw ContractError("frozen classifier changed during transfer");
            }
            ++slot;
        }
    }
}

void validate_sources(const std::vector<SourceModel>& sources) {
    if (sources.empty()) throw ContractError("transfer: need at least one source model");
    for (const auto& m : sources) {
        if (m.num_classes != sources[0].num_classes) {
            throw ContractError("transfer: num_classes mismatch across sources (" +
                                std::to_string(m.num_classes) + " vs " +
                                std::to_string(sources[0].num_classes) + ")");
        }
        if (!(m.encoder.spec == sources[0].encoder.spec)) {
            throw ContractError("transfer: encoder architecture mismatch across sources");
        }
    }
}

struct LoopSpec {
    bool paired = false;
    Tensor ti_source_x;  // paired: aligned with ti_target_x; unpaired: free
    Tensor ti_target_x;
};

TransferResult run_transfer_loop(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                                 const LoopSpec& ti, const TransferConfig& cfg, const EpochCallback& epoch_cb) {
    validate_sources(sources);
    if (!target.x.defined() || target.x.rows() < 2) {
        throw ContractError("transfer: need at least two target samples");
    }
    const std::size_t n_sources = sources.size();
    const std::size_t n_target = target.x.rows();

    TransferResult result;
    const bool ti_present = ti.ti_source_x.defined() && ti.ti_source_x.rows() > 0 &&
                            ti.ti_target_x.defined() && ti.ti_target_x.rows() > 0;
    const bool ti_on = ti.paired && cfg.use_ti_loss && cfg.lambda_ti > 0.0 && ti_present;
    if (ti.paired && cfg.use_ti_loss && cfg.lambda_ti > 0.0 && !ti_present) {
        result.warnings.push_back("task-irrelevant set is empty; forcing lambda_ti = 0");
    }
    const bool adv_on = !ti.paired && ti_present && cfg.lambda_adv > 0.0;
    if (!ti.paired && !ti_present) {
        result.warnings.push_back("unpaired task-irrelevant sets are empty; running without adversarial term");
    }
    const bool d_on = cfg.use_d_loss && cfg.lambda_d > 0.0;
    const bool pl_on = cfg.use_pl_loss && cfg.lambda_pl > 0.0;
    const double lambda_ti_eff = ti_on ? cfg.lambda_ti : 0.0;
    const double lambda_d_eff = d_on ? cfg.lambda_d : 0.0;
    const double lambda_pl_eff = pl_on ? cfg.lambda_pl : 0.0;
    const bool bn_running = cfg.bn_target_update == BnTargetUpdate::kRunning;

    // Adapted copies train; classifiers freeze for the whole run.
    std::vector<SourceModel> adapted;
    for (const auto& m : sources) {
        SourceModel c = clone_model(m);
        c.frozen_classifier = true;
        adapted.push_back(std::move(c));
    }
    const auto frozen_bytes = classifier_bytes(adapted);

    // Pre-loop extraction: task-irrelevant source features from the
    // unadapted encoders, and the stored BN statistics, both fixed for the
    // entire run.
    std::vector<SourceModel> pristine = sources;  // shares parameter tensors; eval pass only
    if (ti_present) result.ti_cache = precompute_ti_features(pristine, ti.ti_source_x);
    for (const auto& m : sources) result.snapshots.push_back(extract_bn_stats(m));

    MixingWeights zeta = MixingWeights::uniform(n_sources);

    std::vector<ParamGroup> groups(2);
    groups[0].base_lr = cfg.lr_encoder;
    groups[1].base_lr = cfg.lr_head_and_zeta;
    for (auto& m : adapted) {
        for (auto& p : encoder_backbone_params(m.encoder)) groups[0].params.push_back(p);
        for (auto& p : encoder_head_params(m.encoder)) groups[1].params.push_back(p);
    }
    groups[1].params.push_back(zeta.raw);
    SgdOptimizer optimizer(std::move(groups), cfg.momentum, cfg.weight_decay);

    Discriminator disc;
    std::unique_ptr<SgdOptimizer> disc_optimizer;
    if (adv_on) {
        Rng disc_rng(mix_seed(cfg.seed, kTagDiscInit));
        disc = make_discriminator(sources[0].encoder.spec.feature_dim, disc_rng);
        // The discriminator must track the moving encoders; at the head
        // rate it falls behind and the game degenerates.
        disc_optimizer = std::make_unique<SgdOptimizer>(
            std::vector<ParamGroup>{{discriminator_params(disc), cfg.lr_head_and_zeta * 2.0}}, cfg.momentum,
            cfg.weight_decay);
    }

    BatchSampler target_sampler(n_target, cfg.batch_size, Rng(mix_seed(cfg.seed, kTagTargetBatches)));
    std::unique_ptr<BatchSampler> ti_tgt_sampler, ti_src_sampler;
    if (ti_present) {
        ti_tgt_sampler = std::make_unique<BatchSampler>(ti.ti_target_x.rows(), cfg.batch_size,
                                                        Rng(mix_seed(cfg.seed, kTagTiBatches)));
        ti_src_sampler = std::make_unique<BatchSampler>(ti.ti_source_x.rows(), cfg.batch_size,
                                                        Rng(mix_seed(cfg.seed, kTagTiSourceBatches)));
    }

    const std::size_t iters_per_epoch = std::max<std::size_t>(1, n_target / target_sampler.batch_size());
    const std::size_t total_iters = cfg.transfer_epochs * iters_per_epoch;

    TrainState state;
    std::vector<int> pseudo_labels;
    const auto refresh_labels = [&] {
        pseudo_labels = compute_pseudo_labels(adapted, zeta, target.x).gen1.labels;
    };

    std::size_t done = 0;
    for (std::size_t epoch = 0; epoch < cfg.transfer_epochs; ++epoch) {
        state.epoch = epoch;
        if (pl_on && cfg.pseudo_label_refresh == PseudoLabelRefresh::kPerEpoch) refresh_labels();
        for (std::size_t it = 0; it < iters_per_epoch; ++it) {
            state.iteration = done;
            state.progress = static_cast<double>(done) / static_cast<double>(total_iters);
            const double lr_factor = lr_schedule(1.0, state.progress);
            if (pl_on && cfg.pseudo_label_refresh == PseudoLabelRefresh::kPerIteration) refresh_labels();

            const auto target_idx = target_sampler.next();
            Tensor batch = gather_rows(target.x, target_idx);

            // Adversarial discriminator step: encoder outputs detached so
            // only the discriminator receives gradients.
            double l_td_value = 0.0;
            std::vector<std::size_t> ti_tgt_idx;
            if (adv_on) {
                ti_tgt_idx = ti_tgt_sampler->next();
                const auto ti_src_idx = ti_src_sampler->next();
                Tensor ti_tgt_batch = gather_rows(ti.ti_target_x, ti_tgt_idx);
                std::vector<Tensor> tgt_feats;
                for (auto& m : adapted) {
                    tgt_feats.push_back(encode(m, nullptr, ti_tgt_batch, Mode::kTrain, false).features);
                }
                std::vector<Tensor> src_feats;
                for (std::size_t j = 0; j < n_sources; ++j) {
                    src_feats.push_back(cache_rows(result.ti_cache, j, ti_src_idx));
                }
                Tensor src_weighted = weighted_feature_sum(nullptr, src_feats, zeta);
                Tensor tgt_weighted = weighted_feature_sum(nullptr, tgt_feats, zeta);
                Tape d_tape;
                Tensor l_td = loss_true_discriminator(&d_tape, disc, src_weighted, tgt_weighted);
                l_td_value = l_td.item();
                disc_optimizer->zero_grad();
                d_tape.backward(l_td);
                disc_optimizer->step(lr_factor);
            }

            Tape tape;
            std::vector<std::vector<BatchNormResult>> bn_stats;
            Tensor fused;
            for (std::size_t k = 0; k < n_sources; ++k) {
                EncodeResult enc = encode(adapted[k], &tape, batch, Mode::kTrain, bn_running);
                Tensor probs = classify(adapted[k], &tape, enc.features);
                Tensor weighted = scalar_mul(&tape, slice_scalar(&tape, zeta.raw, k), probs);
                fused = fused.defined() ? add(&tape, fused, weighted) : weighted;
                bn_stats.push_back(std::move(enc.bn_sites));
            }

            ObjectiveParts parts;
            parts.ent = loss_entropy(&tape, fused);
            parts.div = loss_diversity(&tape, fused);
            if (pl_on) parts.pl = loss_pseudo(&tape, fused, gather_labels(pseudo_labels, target_idx));
            if (d_on) parts.d = loss_distribution(&tape, result.snapshots, bn_stats, zeta);
            if (ti_on) {
                const auto ti_idx = ti_tgt_sampler->next();
                Tensor ti_batch = gather_rows(ti.ti_target_x, ti_idx);
                std::vector<Tensor> ti_feats;
                for (auto& m : adapted) {
                    ti_feats.push_back(encode(m, &tape, ti_batch, Mode::kTrain, bn_running).features);
                }
                parts.ti = loss_ti(&tape, result.ti_cache, ti_feats, zeta, ti_idx);
            }
            Objective obj = total_objective(&tape, parts, lambda_ti_eff, lambda_d_eff, lambda_pl_eff);

            Tensor optimized = obj.total;
            if (adv_on) {
                Tensor ti_tgt_batch = gather_rows(ti.ti_target_x, ti_tgt_idx);
                std::vector<Tensor> tgt_feats;
                for (auto& m : adapted) {
                    tgt_feats.push_back(encode(m, &tape, ti_tgt_batch, Mode::kTrain, bn_running).features);
                }
                Tensor tgt_weighted = weighted_feature_sum(&tape, tgt_feats, zeta);
                Tensor l_ad = loss_adv_discriminator(&tape, disc, tgt_weighted);
                optimized = add(&tape, optimized, scale(&tape, l_ad, cfg.lambda_adv * cfg.lambda_ad));
                obj.report.l_td = l_td_value;
                obj.report.l_ad = l_ad.item();
                obj.report.l_adv = l_td_value + cfg.lambda_ad * l_ad.item();
            }

            optimizer.zero_grad();
            tape.backward(optimized);
            optimizer.step(lr_factor);
            zeta.project();

            state.report = obj.report;
            state.zeta_history.push_back(zeta.projected);
            IterationRecord record;
            record.iteration = done;
            record.epoch = epoch;
            record.report = obj.report;
            record.zeta = zeta.projected;
            record.lr_encoder = lr_schedule(cfg.lr_encoder, state.progress);
            result.history.push_back(std::move(record));
            ++done;
        }
        if (epoch_cb) {
            FusedTargetModel view{adapted, zeta};
            epoch_cb(epoch, view);
        }
    }

    check_classifiers_unchanged(adapted, frozen_bytes);
    result.model.models = std::move(adapted);
    result.model.zeta = zeta;
    result.final_zeta = zeta.projected;
    if (adv_on) result.discriminator = disc;
    return result;
}

}  // namespace

double lr_schedule(double theta0, double p) {
    if (p < 0.0 || p > 1.0) throw ContractError("lr_schedule: progress must be in [0,1]");
    return theta0 * std::pow(1.0 + 10.0 * p, -0.75);
}

Tensor label_smoothing_loss(Tape* tape, const Tensor& probs, std::span<const int> labels, double alpha) {
    const std::size_t b = probs.rows(), n = probs.cols();
    if (labels.size() != b) {
        throw ContractError("label_smoothing_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                            std::to_string(b));
    }
    std::vector<double> q(b * n, alpha / static_cast<double>(n));
    for (std::size_t i = 0; i < b; ++i) {
        q[i * n + static_cast<std::size_t>(labels[i])] += 1.0 - alpha;
    }
    Tensor picked = mul(tape, Tensor::from({b, n}, std::move(q)),
                        log_elem(tape, clamp_min(tape, probs, 1e-12)));
    return scale(tape, sum_all(tape, picked), -1.0 / static_cast<double>(b));
}

SourceModel train_source(const LabeledSet& data, const EncoderSpec& spec, std::size_t num_classes,
                         const TransferConfig& config, std::uint64_t seed) {
    const std::size_t n = data.x.defined() ? data.x.rows() : 0;
    if (n < 2) throw ContractError("train_source: need at least two samples");
    if (data.y.size() != n) {
        throw ContractError("train_source: " + std::to_string(data.y.size()) + " labels for " +
                            std::to_string(n) + " samples");
    }
    std::set<int> seen;
    for (int y : data.y) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ContractError("train_source: label " + std::to_string(y) + " outside [0," +
                                std::to_string(num_classes) + ")");
        }
        seen.insert(y);
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (!seen.count(static_cast<int>(k))) {
            std::fprintf(stderr, "warning: class %zu absent from source training data\n", k);
        }
    }

    Rng init_rng(mix_seed(seed, kTagModelInit));
    SourceModel model = make_source_model(spec, num_classes, init_rng);

    std::vector<ParamGroup> groups(2);
    groups[0].base_lr = config.lr_encoder;
    groups[0].params = encoder_backbone_params(model.encoder);
    groups[1].base_lr = config.lr_head_and_zeta;
    groups[1].params = encoder_head_params(model.encoder);
    for (auto& p : classifier_params(model)) groups[1].params.push_back(p);
    SgdOptimizer optimizer(std::move(groups), config.momentum, config.weight_decay);

    BatchSampler sampler(n, config.batch_size, Rng(mix_seed(seed, kTagSourceBatches)));
    const std::size_t iters_per_epoch = std::max<std::size_t>(1, n / sampler.batch_size());
    for (std::size_t epoch = 0; epoch < config.source_epochs; ++epoch) {
        for (std::size_t it = 0; it < iters_per_epoch; ++it) {
            const auto idx = sampler.next();
            Tensor batch = gather_rows(data.x, idx);
            const auto labels = gather_labels(data.y, idx);
            Tape tape;
            Tensor probs = classify(model, &tape, encode(model, &tape, batch, Mode::kTrain, true).features);
            Tensor loss = label_smoothing_loss(&tape, probs, labels, config.label_smoothing);
            optimizer.zero_grad();
            tape.backward(loss);
            optimizer.step();
        }
    }
    return model;
}

TransferResult transfer(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                        const PairedTiDataset& ti, const TransferConfig& config,
                        const EpochCallback& epoch_cb) {
    LoopSpec spec;
    spec.paired = true;
    spec.ti_source_x = ti.source_x;
    spec.ti_target_x = ti.target_x;
    if (spec.ti_source_x.defined() && spec.ti_target_x.defined() &&
        spec.ti_source_x.rows() != spec.ti_target_x.rows()) {
        throw ContractError("transfer: paired TI sets differ in size");
    }
    return run_transfer_loop(sources, target, spec, config, epoch_cb);
}

TransferResult transfer_unpaired(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                                 const Tensor& ti_unpaired_source, const Tensor& ti_unpaired_target,
                                 const TransferConfig& config, const EpochCallback& epoch_cb) {
    LoopSpec spec;
    spec.paired = false;
    spec.ti_source_x = ti_unpaired_source;
    spec.ti_target_x = ti_unpaired_target;
    return run_transfer_loop(sources, target, spec, config, epoch_cb);
}

namespace {

double accuracy_of(const Tensor& probs, const std::vector<int>& labels) {
    const std::size_t n = probs.rows(), c = probs.cols();
    if (labels.size() != n) {
        throw ContractError("evaluate: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                            " samples");
    }
    auto pv = probs.values();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (pv[i * c + j] > pv[i * c + best]) best = j;  // ties keep the lowest index
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

double evaluate(FusedTargetModel& model, const LabeledSet& heldout) {
    return accuracy_of(fuse_predict(model, nullptr, heldout.x, Mode::kEval), heldout.y);
}

double evaluate(SourceModel& model, const LabeledSet& heldout) {
    return accuracy_of(predict(model, nullptr, heldout.x, Mode::kEval), heldout.y);
}

std::vector<AblationRow> ablate(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                                const LabeledSet& target_eval, const PairedTiDataset& ti,
                                const TransferConfig& config) {
    const AblationRow arms[] = {
        {"ma", false, false, 0.0},
        {"ma+d", true, false, 0.0},
        {"ma+ti", false, true, 0.0},
        {"all", true, true, 0.0},
    };
    std::vector<AblationRow> rows;
    for (const auto& arm : arms) {
        TransferConfig cfg = config;
        cfg.use_d_loss = arm.use_d;
        cfg.use_ti_loss = arm.use_ti;
        TransferResult res = transfer(sources, target, ti, cfg);
        AblationRow row = arm;
        row.accuracy = evaluate(res.model, target_eval);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace xmodal
