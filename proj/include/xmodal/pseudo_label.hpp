#pragma once

#include <span>
#include <vector>

#include "xmodal/model.hpp"

namespace xmodal {

struct CentroidSet {
    Tensor centroids;  // [num_classes x feature_dim]
    int generation = 0;
    std::vector<bool> empty_class;  // classes with no supporting mass / members
};

struct PseudoLabels {
    std::vector<int> labels;
    int generation = 0;
};

// Soft class centroids per source, weighted by predicted probabilities and
// combined across sources by zeta. Denominators carry a 1e-8 guard so an
// unsupported class yields a finite (zero) centroid instead of NaN.
CentroidSet soft_centroids(const std::vector<Tensor>& per_source_features,
                           const std::vector<Tensor>& per_source_probs, std::span<const double> zeta);

// zeta-weighted fusion of per-source feature rows.
Tensor weighted_features(const std::vector<Tensor>& per_source_features, std::span<const double> zeta);

// Nearest centroid by squared Euclidean distance; ties take the lowest
// class index.
PseudoLabels assign_labels(const Tensor& fused_features, const CentroidSet& centroids);

// Per-class member means per source, zeta-combined. A class with no members
// keeps its centroid from `fallback`.
CentroidSet hard_centroids(const std::vector<Tensor>& per_source_features, const PseudoLabels& labels,
                           std::span<const double> zeta, const CentroidSet& fallback);

struct PseudoLabelTrace {
    Tensor fused_features;
    CentroidSet soft;
    PseudoLabels gen0;
    CentroidSet hard;
    PseudoLabels gen1;  // final labels
};

// Full pipeline: soft centroids -> assignment -> hard centroids -> one
// refinement assignment, and nothing further. Features and probabilities
// come from an eval-mode pass of the given models.
PseudoLabelTrace compute_pseudo_labels(std::vector<SourceModel>& sources, const MixingWeights& zeta,
                                       const Tensor& target_x);

}  // namespace xmodal
