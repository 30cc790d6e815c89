#include "xmodal/losses.hpp"

#include <cmath>

namespace xmodal {

namespace {

constexpr double kProbFloor = 1e-12;  // clamp for every log term

// Guard against non-probability inputs. The tolerance leaves headroom for
// finite-difference probes of the raw mixing weights, which shift fused row
// sums by the probe step.
void check_prob_rows(const char* op, const Tensor& probs) {
    const std::size_t b = probs.rows(), n = probs.cols();
    auto pv = probs.values();
    for (std::size_t i = 0; i < b; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += pv[i * n + j];
        if (std::abs(s - 1.0) > 1e-4) {
            throw ContractError(std::string(op) + ": row " + std::to_string(i) + " sums to " +
                                std::to_string(s) + ", expected 1");
        }
    }
}

}  // namespace

TiFeatureCache precompute_ti_features(std::vector<SourceModel>& sources, const Tensor& ti_source_x) {
    if (!ti_source_x.defined() || ti_source_x.rows() == 0) {
        throw ConfigError("precompute_ti_features: empty task-irrelevant set");
    }
    TiFeatureCache cache;
    for (auto& model : sources) {
        Tensor feats = encode(model, nullptr, ti_source_x, Mode::kEval).features;
        cache.features.push_back(feats.clone());  // detach and freeze
    }
    return cache;
}

Tensor cache_rows(const TiFeatureCache& cache, std::size_t source, std::span<const std::size_t> indices) {
    if (source >= cache.num_sources()) throw ContractError("cache_rows: source index out of range");
    return gather_rows(cache.features[source], indices);
}

Tensor loss_ti(Tape* tape, const TiFeatureCache& cache, const std::vector<Tensor>& ti_target_features,
               MixingWeights& zeta, std::span<const std::size_t> batch_indices) {
    const std::size_t n_sources = cache.num_sources();
    const std::size_t n_ti = cache.num_samples();
    if (ti_target_features.size() != n_sources) {
        throw ContractError("loss_ti: feature list covers " + std::to_string(ti_target_features.size()) +
                            " sources, cache has " + std::to_string(n_sources));
    }
    for (std::size_t idx : batch_indices) {
        if (idx >= n_ti) {
            throw ContractError("loss_ti: index " + std::to_string(idx) + " outside cache of " +
                                std::to_string(n_ti));
        }
    }
    Tensor total;
    for (std::size_t j = 0; j < n_sources; ++j) {
        Tensor psi = cache_rows(cache, j, batch_indices);
        Tensor residual = sub(tape, psi, ti_target_features[j]);
        Tensor weighted = scalar_mul(tape, slice_scalar(tape, zeta.raw, j), residual);
        Tensor contrib = sum_all(tape, square(tape, weighted));
        total = total.defined() ? add(tape, total, contrib) : contrib;
    }
    return scale(tape, total, 1.0 / static_cast<double>(batch_indices.size()));
}

std::vector<std::vector<BatchNormResult>> target_batch_bn_stats(std::vector<SourceModel>& sources, Tape* tape,
                                                                const Tensor& target_batch) {
    std::vector<std::vector<BatchNormResult>> out;
    for (auto& model : sources) {
        out.push_back(encode(model, tape, target_batch, Mode::kTrain, /*update_running=*/false).bn_sites);
    }
    return out;
}

Tensor loss_distribution(Tape* tape, const std::vector<BnStatsSnapshot>& snapshots,
                         const std::vector<std::vector<BatchNormResult>>& target_stats, MixingWeights& zeta) {
    const std::size_t n_sources = snapshots.size();
    if (target_stats.size() != n_sources) {
        throw ContractError("loss_distribution: " + std::to_string(target_stats.size()) +
                            " target stat sets vs " + std::to_string(n_sources) + " snapshots");
    }
    if (n_sources == 0) throw ContractError("loss_distribution: no sources");
    const std::size_t n_layers = snapshots[0].layers.size();
    for (std::size_t j = 0; j < n_sources; ++j) {
        if (snapshots[j].layers.size() != n_layers || target_stats[j].size() != n_layers) {
            throw ContractError("loss_distribution: layer-count mismatch at source " + std::to_string(j));
        }
    }
    Tensor total;
    for (std::size_t l = 0; l < n_layers; ++l) {
        Tensor src_mean, src_var, tgt_mean, tgt_var;
        for (std::size_t j = 0; j < n_sources; ++j) {
            Tensor zj = slice_scalar(tape, zeta.raw, j);
            const auto& layer = snapshots[j].layers[l];
            Tensor sm = scalar_mul(tape, zj, Tensor::from({layer.mean.size()}, layer.mean));
            Tensor sv = scalar_mul(tape, zj, Tensor::from({layer.var.size()}, layer.var));
            Tensor tm = scalar_mul(tape, zj, target_stats[j][l].batch_mean);
            Tensor tv = scalar_mul(tape, zj, target_stats[j][l].batch_var);
            src_mean = src_mean.defined() ? add(tape, src_mean, sm) : sm;
            src_var = src_var.defined() ? add(tape, src_var, sv) : sv;
            tgt_mean = tgt_mean.defined() ? add(tape, tgt_mean, tm) : tm;
            tgt_var = tgt_var.defined() ? add(tape, tgt_var, tv) : tv;
        }
        Tensor term = add(tape, l2norm(tape, sub(tape, src_mean, tgt_mean)),
                          l2norm(tape, sub(tape, src_var, tgt_var)));
        total = total.defined() ? add(tape, total, term) : term;
    }
    return total;
}

Tensor loss_entropy(Tape* tape, const Tensor& fused_probs) {
    check_prob_rows("loss_entropy", fused_probs);
    Tensor plogp = mul(tape, fused_probs, log_elem(tape, clamp_min(tape, fused_probs, kProbFloor)));
    return scale(tape, sum_all(tape, plogp), -1.0 / static_cast<double>(fused_probs.rows()));
}

Tensor loss_diversity(Tape* tape, const Tensor& fused_probs) {
    Tensor marginal = col_mean(tape, fused_probs);
    Tensor plogp = mul(tape, marginal, log_elem(tape, clamp_min(tape, marginal, kProbFloor)));
    return scale(tape, sum_all(tape, plogp), -1.0);
}

Tensor loss_pseudo(Tape* tape, const Tensor& fused_probs, std::span<const int> pseudo_labels) {
    const std::size_t b = fused_probs.rows(), n = fused_probs.cols();
    if (pseudo_labels.size() != b) {
        throw ContractError("loss_pseudo: " + std::to_string(pseudo_labels.size()) + " labels for batch of " +
                            std::to_string(b));
    }
    std::vector<double> mask(b * n, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const int y = pseudo_labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= n) {
            throw ContractError("loss_pseudo: label " + std::to_string(y) + " outside [0," + std::to_string(n) +
                                ")");
        }
        mask[i * n + static_cast<std::size_t>(y)] = 1.0;
    }
    Tensor picked = mul(tape, Tensor::from({b, n}, std::move(mask)),
                        log_elem(tape, clamp_min(tape, fused_probs, kProbFloor)));
    return scale(tape, sum_all(tape, picked), -1.0 / static_cast<double>(b));
}

LossReport compose_report(double l_ti, double l_d, double l_ent, double l_div, double l_pl, double lambda_ti,
                          double lambda_d, double lambda_pl) {
    LossReport r;
    r.l_ti = l_ti;
    r.l_d = l_d;
    r.l_ent = l_ent;
    r.l_div = l_div;
    r.l_pl = l_pl;
    r.l_im = l_div - l_ent;
    r.l_ma = -r.l_im + lambda_pl * l_pl;
    r.l_ms = lambda_ti * l_ti + lambda_d * l_d;
    r.total = r.l_ma + r.l_ms;
    return r;
}

Objective total_objective(Tape* tape, const ObjectiveParts& parts, double lambda_ti, double lambda_d,
                          double lambda_pl) {
    if (!parts.ent.defined() || !parts.div.defined()) {
        throw ContractError("total_objective: entropy and diversity terms are required");
    }
    // l_ma = (l_ent - l_div) + lambda_pl * l_pl, which equals -l_im + lambda_pl * l_pl
    Tensor l_ma = sub(tape, parts.ent, parts.div);
    if (parts.pl.defined()) l_ma = add(tape, l_ma, scale(tape, parts.pl, lambda_pl));
    Tensor l_ms;
    if (parts.ti.defined()) l_ms = scale(tape, parts.ti, lambda_ti);
    if (parts.d.defined()) {
        Tensor weighted = scale(tape, parts.d, lambda_d);
        l_ms = l_ms.defined() ? add(tape, l_ms, weighted) : weighted;
    }
    Objective obj;
    obj.total = l_ms.defined() ? add(tape, l_ma, l_ms) : l_ma;
    obj.report = compose_report(parts.ti.defined() ? parts.ti.item() : 0.0,
                                parts.d.defined() ? parts.d.item() : 0.0, parts.ent.item(), parts.div.item(),
                                parts.pl.defined() ? parts.pl.item() : 0.0, lambda_ti, lambda_d, lambda_pl);
    return obj;
}

Discriminator make_discriminator(std::size_t feature_dim, Rng& rng, std::size_t hidden) {
    auto init = [&rng](std::size_t in, std::size_t out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out), b(out);
        for (auto& v : w) v = rng.uniform(-bound, bound);
        for (auto& v : b) v = rng.uniform(-bound, bound);
        LinearLayer l;
        l.weight = Tensor::from({in, out}, std::move(w), true);
        l.bias = Tensor::from({out}, std::move(b), true);
        return l;
    };
    Discriminator d;
    d.fc1 = init(feature_dim, hidden);
    d.fc2 = init(hidden, 1);
    return d;
}

std::vector<Tensor> discriminator_params(Discriminator& d) {
    return {d.fc1.weight, d.fc1.bias, d.fc2.weight, d.fc2.bias};
}

Tensor discriminate(Discriminator& d, Tape* tape, const Tensor& features) {
    Tensor h = relu(tape, linear_forward(tape, features, d.fc1.weight, d.fc1.bias));
    Tensor out = sigmoid(tape, linear_forward(tape, h, d.fc2.weight, d.fc2.bias));
    for (double v : out.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ContractError("discriminator output outside (0,1)");
    }
    return out;
}

Tensor weighted_feature_sum(Tape* tape, const std::vector<Tensor>& per_source, MixingWeights& zeta) {
    if (per_source.size() != zeta.size()) {
        throw ContractError("weighted_feature_sum: " + std::to_string(per_source.size()) +
                            " feature sets vs zeta of length " + std::to_string(zeta.size()));
    }
    Tensor out;
    for (std::size_t j = 0; j < per_source.size(); ++j) {
        Tensor w = scalar_mul(tape, slice_scalar(tape, zeta.raw, j), per_source[j]);
        out = out.defined() ? add(tape, out, w) : w;
    }
    return out;
}

Tensor loss_true_discriminator(Tape* tape, Discriminator& d, const Tensor& src_weighted,
                               const Tensor& tgt_weighted) {
    const std::size_t b = src_weighted.rows();
    if (tgt_weighted.rows() != b) {
        throw ContractError("loss_true_discriminator: batch mismatch " + std::to_string(b) + " vs " +
                            std::to_string(tgt_weighted.rows()));
    }
    Tensor d_src = discriminate(d, tape, src_weighted);
    Tensor d_tgt = discriminate(d, tape, tgt_weighted);
    Tensor log_src = log_elem(tape, clamp_min(tape, d_src, kProbFloor));
    Tensor one_minus = sub(tape, Tensor::full(d_tgt.shape(), 1.0), d_tgt);
    Tensor log_tgt = log_elem(tape, clamp_min(tape, one_minus, kProbFloor));
    Tensor total = add(tape, sum_all(tape, log_src), sum_all(tape, log_tgt));
    return scale(tape, total, -1.0 / static_cast<double>(b));
}

Tensor loss_adv_discriminator(Tape* tape, Discriminator& d, const Tensor& tgt_weighted) {
    Tensor d_tgt = discriminate(d, tape, tgt_weighted);
    Tensor log_tgt = log_elem(tape, clamp_min(tape, d_tgt, kProbFloor));
    return scale(tape, sum_all(tape, log_tgt), -1.0 / static_cast<double>(tgt_weighted.rows()));
}

Tensor loss_true_discriminator(Tape* tape, Discriminator& d, const TiFeatureCache& cache,
                               const std::vector<Tensor>& ti_target_features, MixingWeights& zeta) {
    std::vector<std::size_t> all(cache.num_samples());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<Tensor> src;
    for (std::size_t j = 0; j < cache.num_sources(); ++j) src.push_back(cache_rows(cache, j, all));
    Tensor src_weighted = weighted_feature_sum(tape, src, zeta);
    Tensor tgt_weighted = weighted_feature_sum(tape, ti_target_features, zeta);
    return loss_true_discriminator(tape, d, src_weighted, tgt_weighted);
}

Tensor loss_adv_discriminator(Tape* tape, Discriminator& d, const std::vector<Tensor>& ti_target_features,
                              MixingWeights& zeta) {
    return loss_adv_discriminator(tape, d, weighted_feature_sum(tape, ti_target_features, zeta));
}

}  // namespace xmodal
