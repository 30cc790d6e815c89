#include "xmodal/model.hpp"

#include <cmath>

namespace xmodal {

namespace {

LinearLayer make_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    std::vector<double> b(out);
    for (auto& v : b) v = rng.uniform(-bound, bound);
    LinearLayer layer;
    layer.weight = Tensor::from({in, out}, std::move(w), true);
    layer.bias = Tensor::from({out}, std::move(b), true);
    return layer;
}

LinearLayer clone_linear(const LinearLayer& l) {
    return {l.weight.clone(), l.bias.clone()};
}

}  // namespace

SourceModel make_source_model(const EncoderSpec& spec, std::size_t num_classes, Rng& rng) {
    if (spec.hidden_dims.empty()) throw ContractError("encoder spec: hidden_dims must be nonempty");
    if (spec.feature_dim == 0) throw ContractError("encoder spec: feature_dim must be positive");
    SourceModel m;
    m.encoder.spec = spec;
    std::size_t in = spec.input_dim;
    for (std::size_t h : spec.hidden_dims) {
        m.encoder.hidden.push_back(make_linear(in, h, rng));
        if (spec.bn_after_each_hidden) m.encoder.bn.push_back(BatchNormLayer::make(h));
        in = h;
    }
    m.encoder.output = make_linear(in, spec.feature_dim, rng);
    m.classifier = make_linear(spec.feature_dim, num_classes, rng);
    m.num_classes = num_classes;
    return m;
}

SourceModel clone_model(const SourceModel& m) {
    SourceModel c;
    c.encoder.spec = m.encoder.spec;
    for (const auto& l : m.encoder.hidden) c.encoder.hidden.push_back(clone_linear(l));
    for (const auto& bn : m.encoder.bn) {
        BatchNormLayer b;
        b.gamma = bn.gamma.clone();
        b.beta = bn.beta.clone();
        b.running_mean = bn.running_mean;
        b.running_var = bn.running_var;
        b.momentum = bn.momentum;
        b.epsilon = bn.epsilon;
        b.num_channels = bn.num_channels;
        c.encoder.bn.push_back(std::move(b));
    }
    c.encoder.output = clone_linear(m.encoder.output);
    c.classifier = clone_linear(m.classifier);
    c.num_classes = m.num_classes;
    c.frozen_classifier = m.frozen_classifier;
    return c;
}

EncodeResult encode(SourceModel& model, Tape* tape, const Tensor& batch, Mode mode, bool update_running) {
    const auto& spec = model.encoder.spec;
    if (batch.shape().size() != 2 || batch.cols() != spec.input_dim) {
        throw ContractError("encode: batch " + shape_to_string(batch.shape()) + " does not match input_dim " +
                            std::to_string(spec.input_dim));
    }
    EncodeResult result;
    Tensor h = batch;
    for (std::size_t i = 0; i < model.encoder.hidden.size(); ++i) {
        h = linear_forward(tape, h, model.encoder.hidden[i].weight, model.encoder.hidden[i].bias);
        if (spec.bn_after_each_hidden) {
            BatchNormResult bn = batchnorm_forward(tape, h, model.encoder.bn[i], mode, update_running);
            h = bn.y;
            result.bn_sites.push_back(std::move(bn));
        }
        h = relu(tape, h);
    }
    result.features = linear_forward(tape, h, model.encoder.output.weight, model.encoder.output.bias);
    return result;
}

Tensor classify(SourceModel& model, Tape* tape, const Tensor& features) {
    return softmax(tape, linear_forward(tape, features, model.classifier.weight, model.classifier.bias));
}

Tensor predict(SourceModel& model, Tape* tape, const Tensor& batch, Mode mode) {
    return classify(model, tape, encode(model, tape, batch, mode).features);
}

MixingWeights MixingWeights::uniform(std::size_t n) {
    if (n == 0) throw ContractError("mixing weights: need at least one source");
    MixingWeights z;
    z.raw = Tensor::full({n}, 1.0 / static_cast<double>(n), true);
    z.projected.assign(n, 1.0 / static_cast<double>(n));
    return z;
}

std::vector<double> zeta_project(const std::vector<double>& raw) {
    std::vector<double> out(raw.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double v = raw[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

void MixingWeights::project() {
    auto vals = raw.values();
    std::vector<double> current(vals.begin(), vals.end());
    projected = zeta_project(current);
    for (std::size_t i = 0; i < projected.size(); ++i) vals[i] = projected[i];
}

Tensor fuse_predict(std::vector<SourceModel>& models, MixingWeights& zeta, Tape* tape, const Tensor& batch,
                    Mode mode) {
    if (models.empty()) throw ContractError("fuse_predict: no models");
    if (zeta.size() != models.size()) {
        throw ContractError("fuse_predict: " + std::to_string(models.size()) + " models vs zeta of length " +
                            std::to_string(zeta.size()));
    }
    Tensor fused;
    for (std::size_t k = 0; k < models.size(); ++k) {
        Tensor probs = predict(models[k], tape, batch, mode);
        Tensor weighted = scalar_mul(tape, slice_scalar(tape, zeta.raw, k), probs);
        fused = fused.defined() ? add(tape, fused, weighted) : weighted;
    }
    return fused;
}

BnStatsSnapshot extract_bn_stats(const SourceModel& model) {
    BnStatsSnapshot snap;
    for (const auto& bn : model.encoder.bn) snap.layers.push_back({bn.running_mean, bn.running_var});
    return snap;
}

std::vector<Tensor> encoder_backbone_params(Encoder& enc) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < enc.hidden.size(); ++i) {
        out.push_back(enc.hidden[i].weight);
        out.push_back(enc.hidden[i].bias);
        if (enc.spec.bn_after_each_hidden) {
            out.push_back(enc.bn[i].gamma);
            out.push_back(enc.bn[i].beta);
        }
    }
    return out;
}

std::vector<Tensor> encoder_head_params(Encoder& enc) {
    return {enc.output.weight, enc.output.bias};
}

std::vector<Tensor> encoder_params(Encoder& enc) {
    auto out = encoder_backbone_params(enc);
    for (auto& t : encoder_head_params(enc)) out.push_back(t);
    return out;
}

std::vector<Tensor> classifier_params(SourceModel& m) {
    return {m.classifier.weight, m.classifier.bias};
}

}  // namespace xmodal
