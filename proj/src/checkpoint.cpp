#include "xmodal/checkpoint.hpp"

#include <zlib.h>

#include <cstring>

#include "xmodal/util.hpp"

namespace xmodal {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'K', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_block(std::string& out, std::span<const double> values) {
    put_u64(out, values.size());
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(out, bits);
    }
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw IoError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes[pos++]);
    }
    std::vector<double> f64_block(std::size_t expected) {
        const std::uint64_t count = u64();
        if (count != expected) {
            throw IoError("checkpoint: block of " + std::to_string(count) + " values, expected " +
                          std::to_string(expected));
        }
        std::vector<double> out(count);
        for (auto& v : out) {
            const std::uint64_t bits = u64();
            std::memcpy(&v, &bits, 8);
        }
        return out;
    }
};

std::uint32_t crc_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string arch_string(const EncoderSpec& spec, std::size_t num_classes) {
    return "input_dim=" + std::to_string(spec.input_dim) + ";hidden=" + join_sizes(spec.hidden_dims) +
           ";feature_dim=" + std::to_string(spec.feature_dim) +
           ";bn=" + (spec.bn_after_each_hidden ? "1" : "0") + ";classes=" + std::to_string(num_classes);
}

// Parameter block order per model: for each hidden layer W, b, gamma, beta,
// running_mean, running_var; then output W, b; then classifier W, b.
void encode_model(std::string& out, const SourceModel& m) {
    for (std::size_t i = 0; i < m.encoder.hidden.size(); ++i) {
        put_f64_block(out, m.encoder.hidden[i].weight.values());
        put_f64_block(out, m.encoder.hidden[i].bias.values());
        if (m.encoder.spec.bn_after_each_hidden) {
            const auto& bn = m.encoder.bn[i];
            put_f64_block(out, bn.gamma.values());
            put_f64_block(out, bn.beta.values());
            put_f64_block(out, bn.running_mean);
            put_f64_block(out, bn.running_var);
        }
    }
    put_f64_block(out, m.encoder.output.weight.values());
    put_f64_block(out, m.encoder.output.bias.values());
    put_f64_block(out, m.classifier.weight.values());
    put_f64_block(out, m.classifier.bias.values());
}

SourceModel decode_model(Reader& r, const EncoderSpec& spec, std::size_t num_classes, bool frozen) {
    SourceModel m;
    m.encoder.spec = spec;
    m.num_classes = num_classes;
    m.frozen_classifier = frozen;
    std::size_t in = spec.input_dim;
    for (std::size_t h : spec.hidden_dims) {
        LinearLayer layer;
        layer.weight = Tensor::from({in, h}, r.f64_block(in * h), true);
        layer.bias = Tensor::from({h}, r.f64_block(h), true);
        m.encoder.hidden.push_back(std::move(layer));
        if (spec.bn_after_each_hidden) {
            BatchNormLayer bn = BatchNormLayer::make(h);
            bn.gamma = Tensor::from({h}, r.f64_block(h), true);
            bn.beta = Tensor::from({h}, r.f64_block(h), true);
            bn.running_mean = r.f64_block(h);
            bn.running_var = r.f64_block(h);
            m.encoder.bn.push_back(std::move(bn));
        }
        in = h;
    }
    m.encoder.output.weight = Tensor::from({in, spec.feature_dim}, r.f64_block(in * spec.feature_dim), true);
    m.encoder.output.bias = Tensor::from({spec.feature_dim}, r.f64_block(spec.feature_dim), true);
    m.classifier.weight =
        Tensor::from({spec.feature_dim, num_classes}, r.f64_block(spec.feature_dim * num_classes), true);
    m.classifier.bias = Tensor::from({num_classes}, r.f64_block(num_classes), true);
    return m;
}

std::string encode_checkpoint(Checkpoint::Kind kind, const std::vector<const SourceModel*>& models,
                              std::span<const double> zeta) {
    const auto& spec = models[0]->encoder.spec;
    const std::size_t num_classes = models[0]->num_classes;
    for (const auto* m : models) {
        if (!(m->encoder.spec == spec) || m->num_classes != num_classes) {
            throw ContractError("checkpoint: models disagree on architecture");
        }
    }
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, arch_config_hash(spec, num_classes));
    out.push_back(static_cast<char>(kind));
    put_u32(out, static_cast<std::uint32_t>(models.size()));
    put_u32(out, static_cast<std::uint32_t>(spec.input_dim));
    put_u32(out, static_cast<std::uint32_t>(spec.hidden_dims.size()));
    for (auto h : spec.hidden_dims) put_u32(out, static_cast<std::uint32_t>(h));
    put_u32(out, static_cast<std::uint32_t>(spec.feature_dim));
    out.push_back(spec.bn_after_each_hidden ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(num_classes));
    out.push_back(models[0]->frozen_classifier ? 1 : 0);
    for (const auto* m : models) encode_model(out, *m);
    if (kind == Checkpoint::Kind::kFused) put_f64_block(out, zeta);
    put_u32(out, crc_of(out));
    return out;
}

}  // namespace

std::uint64_t arch_config_hash(const EncoderSpec& spec, std::size_t num_classes) {
    return fnv1a64_str(arch_string(spec, num_classes));
}

SourceModel& Checkpoint::single() {
    if (kind != Kind::kSource || models.size() != 1) {
        throw ContractError("checkpoint: expected a single source model");
    }
    return models[0];
}

FusedTargetModel Checkpoint::fused() const {
    FusedTargetModel f;
    f.models = models;
    f.zeta = MixingWeights::uniform(models.size());
    if (kind == Kind::kFused) {
        auto vals = f.zeta.raw.values();
        for (std::size_t i = 0; i < zeta.size(); ++i) vals[i] = zeta[i];
        f.zeta.projected = zeta;
    }
    return f;
}

void save_checkpoint(const SourceModel& model, const std::string& path) {
    write_file_bytes(path, encode_checkpoint(Checkpoint::Kind::kSource, {&model}, {}));
}

void save_checkpoint(const FusedTargetModel& fused, const std::string& path) {
    if (fused.models.empty()) throw ContractError("checkpoint: fused model has no members");
    if (fused.zeta.size() != fused.models.size()) {
        throw ContractError("checkpoint: zeta length does not match model count");
    }
    std::vector<const SourceModel*> ptrs;
    for (const auto& m : fused.models) ptrs.push_back(&m);
    write_file_bytes(path, encode_checkpoint(Checkpoint::Kind::kFused, ptrs, fused.zeta.raw.values()));
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 4 + 4 + 8 + 1 + 4 + 4) throw IoError("checkpoint truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("checkpoint: bad magic bytes");
    // Verify the trailing CRC before decoding anything else, so truncated or
    // corrupted files never yield a partial model.
    const std::string body = bytes.substr(0, bytes.size() - 4);
    Reader crc_reader{bytes, bytes.size() - 4};
    const std::uint32_t stored_crc = crc_reader.u32();
    if (crc_of(body) != stored_crc) throw IoError("checkpoint: checksum failure");

    Reader r{bytes, 4};
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw VersionError("checkpoint: format version " + std::to_string(version) + ", expected " +
                           std::to_string(kVersion));
    }
    const std::uint64_t stored_hash = r.u64();
    const auto kind = static_cast<Checkpoint::Kind>(r.u8());
    const std::uint32_t num_models = r.u32();
    EncoderSpec spec;
    spec.input_dim = r.u32();
    spec.hidden_dims.resize(r.u32());
    for (auto& h : spec.hidden_dims) h = r.u32();
    spec.feature_dim = r.u32();
    spec.bn_after_each_hidden = r.u8() != 0;
    const std::uint32_t num_classes = r.u32();
    const bool frozen = r.u8() != 0;
    if (stored_hash != arch_config_hash(spec, num_classes)) {
        throw IoError("checkpoint: config hash does not match stored architecture");
    }
    Checkpoint ckpt;
    ckpt.kind = kind;
    for (std::uint32_t i = 0; i < num_models; ++i) ckpt.models.push_back(decode_model(r, spec, num_classes, frozen));
    if (kind == Checkpoint::Kind::kFused) ckpt.zeta = r.f64_block(num_models);
    if (r.pos != bytes.size() - 4) throw IoError("checkpoint: trailing bytes before checksum");
    return ckpt;
}

}  // namespace xmodal
