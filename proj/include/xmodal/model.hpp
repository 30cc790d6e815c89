#pragma once

#include <cstdint>
#include <vector>

#include "xmodal/ops.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct EncoderSpec {
    std::size_t input_dim = 64;
    std::vector<std::size_t> hidden_dims = {64, 64};
    std::size_t feature_dim = 32;
    bool bn_after_each_hidden = true;

    std::size_t bn_site_count() const { return bn_after_each_hidden ? hidden_dims.size() : 0; }
    bool operator==(const EncoderSpec&) const = default;
};

struct LinearLayer {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
};

// Feature encoder: per hidden dim a linear layer followed by BN + ReLU,
// then a final linear projection onto the feature space.
struct Encoder {
    EncoderSpec spec;
    std::vector<LinearLayer> hidden;
    std::vector<BatchNormLayer> bn;
    LinearLayer output;
};

struct SourceModel {
    Encoder encoder;
    LinearLayer classifier;  // feature_dim -> num_classes
    std::size_t num_classes = 0;
    bool frozen_classifier = false;
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; BN starts at identity
// with running mean 0 / var 1.
SourceModel make_source_model(const EncoderSpec& spec, std::size_t num_classes, Rng& rng);
SourceModel clone_model(const SourceModel& m);

struct EncodeResult {
    Tensor features;
    // Batch statistics of each BN site's input activations (train mode).
    std::vector<BatchNormResult> bn_sites;
};

EncodeResult encode(SourceModel& model, Tape* tape, const Tensor& batch, Mode mode, bool update_running);
inline EncodeResult encode(SourceModel& model, Tape* tape, const Tensor& batch, Mode mode) {
    return encode(model, tape, batch, mode, mode == Mode::kTrain);
}

// Class probabilities from features / from raw inputs.
Tensor classify(SourceModel& model, Tape* tape, const Tensor& features);
Tensor predict(SourceModel& model, Tape* tape, const Tensor& batch, Mode mode);

// Simplex-constrained per-source mixing weights. `raw` is the optimized
// vector; project() applies sigmoid + normalize in place and mirrors the
// result into `projected`.
struct MixingWeights {
    Tensor raw;                     // [n], requires_grad
    std::vector<double> projected;  // last projection result

    static MixingWeights uniform(std::size_t n);
    std::size_t size() const { return raw.size(); }
    void project();
};

// sigmoid elementwise, then normalize to sum 1.
std::vector<double> zeta_project(const std::vector<double>& raw);

struct FusedTargetModel {
    std::vector<SourceModel> models;
    MixingWeights zeta;
};

// Convex combination of per-model probability rows.
Tensor fuse_predict(std::vector<SourceModel>& models, MixingWeights& zeta, Tape* tape, const Tensor& batch,
                    Mode mode);
inline Tensor fuse_predict(FusedTargetModel& fused, Tape* tape, const Tensor& batch, Mode mode) {
    return fuse_predict(fused.models, fused.zeta, tape, batch, mode);
}

struct BnStatsSnapshot {
    struct Layer {
        std::vector<double> mean;
        std::vector<double> var;
    };
    std::vector<Layer> layers;
};

// Deep copy of the running statistics; later training does not mutate it.
BnStatsSnapshot extract_bn_stats(const SourceModel& model);

// Parameter handles for optimizers / checkpoints, in a fixed documented
// order: per hidden layer W, b, gamma, beta; then output W, b.
std::vector<Tensor> encoder_params(Encoder& enc);
std::vector<Tensor> encoder_backbone_params(Encoder& enc);  // hidden + BN only
std::vector<Tensor> encoder_head_params(Encoder& enc);      // final projection
std::vector<Tensor> classifier_params(SourceModel& m);

}  // namespace xmodal
