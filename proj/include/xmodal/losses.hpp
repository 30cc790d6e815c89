#pragma once

#include <optional>
#include <span>
#include <vector>

#include "xmodal/model.hpp"

namespace xmodal {

// Per-source feature vectors of the task-irrelevant source-modality data,
// extracted once before transfer with the unadapted encoders (eval mode)
// and held constant thereafter.
struct TiFeatureCache {
    std::vector<Tensor> features;  // per source: [n_ti x feature_dim]

    std::size_t num_sources() const { return features.size(); }
    std::size_t num_samples() const { return features.empty() ? 0 : features[0].rows(); }
};

TiFeatureCache precompute_ti_features(std::vector<SourceModel>& sources, const Tensor& ti_source_x);

// Constant gather of cached rows for one source.
Tensor cache_rows(const TiFeatureCache& cache, std::size_t source, std::span<const std::size_t> indices);

// Alignment of target-modality TI features with the cached source-modality
// features: mean over the batch of sum_j ||zeta_j (psi_j^i - f_j(x_i))||^2,
// keeping the term on the same per-sample scale as the other losses.
Tensor loss_ti(Tape* tape, const TiFeatureCache& cache, const std::vector<Tensor>& ti_target_features,
               MixingWeights& zeta, std::span<const std::size_t> batch_indices);

// Batch statistics of every BN site's input activations under each source
// encoder, differentiable w.r.t. the encoder parameters.
std::vector<std::vector<BatchNormResult>> target_batch_bn_stats(std::vector<SourceModel>& sources, Tape* tape,
                                                                const Tensor& target_batch);

// Distance between zeta-weighted stored source statistics and zeta-weighted
// target batch statistics, per BN site, unsquared Euclidean norms.
Tensor loss_distribution(Tape* tape, const std::vector<BnStatsSnapshot>& snapshots,
                         const std::vector<std::vector<BatchNormResult>>& target_stats, MixingWeights& zeta);

Tensor loss_entropy(Tape* tape, const Tensor& fused_probs);
Tensor loss_diversity(Tape* tape, const Tensor& fused_probs);
Tensor loss_pseudo(Tape* tape, const Tensor& fused_probs, std::span<const int> pseudo_labels);

struct LossReport {
    double l_ti = 0.0;
    double l_d = 0.0;
    double l_ent = 0.0;
    double l_div = 0.0;
    double l_im = 0.0;
    double l_pl = 0.0;
    double l_ma = 0.0;
    double l_ms = 0.0;
    double total = 0.0;
    std::optional<double> l_td;
    std::optional<double> l_ad;
    std::optional<double> l_adv;
};

// Derived fields from raw components:
//   l_im = l_div - l_ent
//   l_ma = -l_im + lambda_pl * l_pl
//   l_ms = lambda_ti * l_ti + lambda_d * l_d
//   total = l_ma + l_ms
LossReport compose_report(double l_ti, double l_d, double l_ent, double l_div, double l_pl, double lambda_ti,
                          double lambda_d, double lambda_pl);

struct ObjectiveParts {
    Tensor ti;   // optional: undefined tensor contributes zero
    Tensor d;    // optional
    Tensor ent;  // required
    Tensor div;  // required
    Tensor pl;   // optional
};

struct Objective {
    Tensor total;
    LossReport report;
};

Objective total_objective(Tape* tape, const ObjectiveParts& parts, double lambda_ti, double lambda_d,
                          double lambda_pl);

// Two-layer discriminator with sigmoid output, for the unpaired-TI variant.
struct Discriminator {
    LinearLayer fc1;  // feature_dim -> hidden
    LinearLayer fc2;  // hidden -> 1
};

Discriminator make_discriminator(std::size_t feature_dim, Rng& rng, std::size_t hidden = 32);
std::vector<Tensor> discriminator_params(Discriminator& d);
Tensor discriminate(Discriminator& d, Tape* tape, const Tensor& features);  // [b x 1] in (0,1)

// zeta-weighted combination of per-source feature batches.
Tensor weighted_feature_sum(Tape* tape, const std::vector<Tensor>& per_source, MixingWeights& zeta);

// L_TD = -(1/b) sum_i [log D(src_i) + log(1 - D(tgt_i))]
Tensor loss_true_discriminator(Tape* tape, Discriminator& d, const Tensor& src_weighted,
                               const Tensor& tgt_weighted);
// L_AD = -(1/b) sum_i log D(tgt_i)
Tensor loss_adv_discriminator(Tape* tape, Discriminator& d, const Tensor& tgt_weighted);

// Full-set conveniences building the weighted sums from the cache / feature
// lists before applying the discriminator losses.
Tensor loss_true_discriminator(Tape* tape, Discriminator& d, const TiFeatureCache& cache,
                               const std::vector<Tensor>& ti_target_features, MixingWeights& zeta);
Tensor loss_adv_discriminator(Tape* tape, Discriminator& d, const std::vector<Tensor>& ti_target_features,
                              MixingWeights& zeta);

}  // namespace xmodal
