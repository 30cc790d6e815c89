#include "xmodal/pseudo_label.hpp"

#include <cmath>
#include <limits>

namespace xmodal {

namespace {

constexpr double kDenomGuard = 1e-8;

void check_source_lists(const char* op, const std::vector<Tensor>& feats, std::size_t zeta_len) {
    if (feats.empty()) throw ContractError(std::string(op) + ": no sources");
    if (feats.size() != zeta_len) {
        throw ContractError(std::string(op) + ": " + std::to_string(feats.size()) +
                            " feature sets vs zeta of length " + std::to_string(zeta_len));
    }
    for (const auto& f : feats) {
        if (f.rows() != feats[0].rows() || f.cols() != feats[0].cols()) {
            throw ContractError(std::string(op) + ": inconsistent feature shapes across sources");
        }
    }
}

}  // namespace

CentroidSet soft_centroids(const std::vector<Tensor>& per_source_features,
                           const std::vector<Tensor>& per_source_probs, std::span<const double> zeta) {
    check_source_lists("soft_centroids", per_source_features, zeta.size());
    if (per_source_probs.size() != per_source_features.size()) {
        throw ContractError("soft_centroids: probs cover " + std::to_string(per_source_probs.size()) +
                            " sources, features " + std::to_string(per_source_features.size()));
    }
    const std::size_t n = per_source_features[0].rows();
    const std::size_t dim = per_source_features[0].cols();
    const std::size_t num_classes = per_source_probs[0].cols();
    std::vector<double> combined(num_classes * dim, 0.0);
    std::vector<bool> empty(num_classes, true);
    for (std::size_t j = 0; j < per_source_features.size(); ++j) {
        auto fv = per_source_features[j].values();
        auto pv = per_source_probs[j].values();
        for (std::size_t k = 0; k < num_classes; ++k) {
            std::vector<double> num(dim, 0.0);
            double den = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double p = pv[i * num_classes + k];
                den += p;
                for (std::size_t d = 0; d < dim; ++d) num[d] += p * fv[i * dim + d];
            }
            if (den > 0.0) empty[k] = false;
            const double inv = 1.0 / (den + kDenomGuard);
            for (std::size_t d = 0; d < dim; ++d) combined[k * dim + d] += zeta[j] * num[d] * inv;
        }
    }
    CentroidSet set;
    set.centroids = Tensor::from({num_classes, dim}, std::move(combined));
    set.generation = 0;
    set.empty_class = std::move(empty);
    return set;
}

Tensor weighted_features(const std::vector<Tensor>& per_source_features, std::span<const double> zeta) {
    check_source_lists("weighted_features", per_source_features, zeta.size());
    const std::size_t n = per_source_features[0].rows();
    const std::size_t dim = per_source_features[0].cols();
    std::vector<double> fused(n * dim, 0.0);
    for (std::size_t j = 0; j < per_source_features.size(); ++j) {
        auto fv = per_source_features[j].values();
        for (std::size_t i = 0; i < fused.size(); ++i) fused[i] += zeta[j] * fv[i];
    }
    return Tensor::from({n, dim}, std::move(fused));
}

PseudoLabels assign_labels(const Tensor& fused_features, const CentroidSet& centroids) {
    const std::size_t n = fused_features.rows();
    const std::size_t dim = fused_features.cols();
    const std::size_t num_classes = centroids.centroids.rows();
    if (centroids.centroids.cols() != dim) {
        throw ContractError("assign_labels: feature dim " + std::to_string(dim) + " vs centroid dim " +
                            std::to_string(centroids.centroids.cols()));
    }
    auto xv = fused_features.values();
    auto cv = centroids.centroids.values();
    PseudoLabels out;
    out.labels.resize(n);
    out.generation = centroids.generation;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            double dist = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = xv[i * dim + d] - cv[k * dim + d];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_k = static_cast<int>(k);
            }
        }
        out.labels[i] = best_k;
    }
    return out;
}

CentroidSet hard_centroids(const std::vector<Tensor>& per_source_features, const PseudoLabels& labels,
                           std::span<const double> zeta, const CentroidSet& fallback) {
    check_source_lists("hard_centroids", per_source_features, zeta.size());
    const std::size_t n = per_source_features[0].rows();
    const std::size_t dim = per_source_features[0].cols();
    const std::size_t num_classes = fallback.centroids.rows();
    if (labels.labels.size() != n) {
        throw ContractError("hard_centroids: " + std::to_string(labels.labels.size()) + " labels for " +
                            std::to_string(n) + " samples");
    }
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ContractError("hard_centroids: label " + std::to_string(y) + " outside [0," +
                                std::to_string(num_classes) + ")");
        }
        ++counts[static_cast<std::size_t>(y)];
    }
    std::vector<double> combined(num_classes * dim, 0.0);
    for (std::size_t j = 0; j < per_source_features.size(); ++j) {
        auto fv = per_source_features[j].values();
        std::vector<double> sums(num_classes * dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(labels.labels[i]);
            for (std::size_t d = 0; d < dim; ++d) sums[k * dim + d] += fv[i * dim + d];
        }
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (counts[k] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[k]);
            for (std::size_t d = 0; d < dim; ++d) combined[k * dim + d] += zeta[j] * sums[k * dim + d] * inv;
        }
    }
    auto fb = fallback.centroids.values();
    std::vector<bool> empty(num_classes, false);
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (counts[k] == 0) {
            empty[k] = true;
            for (std::size_t d = 0; d < dim; ++d) combined[k * dim + d] = fb[k * dim + d];
        }
    }
    CentroidSet set;
    set.centroids = Tensor::from({num_classes, dim}, std::move(combined));
    set.generation = 1;
    set.empty_class = std::move(empty);
    return set;
}

PseudoLabelTrace compute_pseudo_labels(std::vector<SourceModel>& sources, const MixingWeights& zeta,
                                       const Tensor& target_x) {
    if (sources.empty()) throw ContractError("compute_pseudo_labels: no sources");
    std::vector<Tensor> feats, probs;
    for (auto& model : sources) {
        Tensor f = encode(model, nullptr, target_x, Mode::kEval).features;
        probs.push_back(classify(model, nullptr, f));
        feats.push_back(std::move(f));
    }
    auto zv = zeta.raw.values();
    std::span<const double> z(zv.data(), zv.size());
    PseudoLabelTrace trace;
    trace.fused_features = weighted_features(feats, z);
    trace.soft = soft_centroids(feats, probs, z);
    trace.gen0 = assign_labels(trace.fused_features, trace.soft);
    trace.hard = hard_centroids(feats, trace.gen0, z, trace.soft);
    trace.gen1 = assign_labels(trace.fused_features, trace.hard);
    trace.gen1.generation = 1;
    return trace;
}

}  // namespace xmodal
