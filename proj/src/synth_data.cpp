#include "xmodal/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/util.hpp"

namespace xmodal {

namespace {

constexpr double kLatentRadius = 3.0;
constexpr double kMinClassDistance = 2.5;
constexpr double kTransformGain = 2.0;

// Sub-stream tags.
enum : std::uint64_t {
    kTagSplit = 1,
    kTagLatent = 2,
    kTagModality = 3,
    kTagDomain = 4,
    kTagSourceTrain = 10,  // +domain
    kTagSourceEval = 100,  // +domain
    kTagTarget = 200,
    kTagTi = 300,
};

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Column-major list of latent_dim columns, each of length input_dim.
using Columns = std::vector<std::vector<double>>;

Columns gaussian_columns(std::size_t input_dim, std::size_t latent_dim, Rng& rng) {
    Columns cols(latent_dim, std::vector<double>(input_dim));
    for (auto& col : cols)
        for (auto& v : col) v = rng.normal();
    return cols;
}

void orthonormalize(Columns& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t d = 0; d < cols[i].size(); ++d) dot += cols[i][d] * cols[j][d];
            for (std::size_t d = 0; d < cols[i].size(); ++d) cols[i][d] -= dot * cols[j][d];
        }
        double norm = 0.0;
        for (double v : cols[i]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ContractError("modality transform: degenerate column during orthonormalization");
        for (auto& v : cols[i]) v /= norm;
    }
}

struct ModalityTransform {
    Columns mixing;  // latent_dim columns of length input_dim, orthonormal
    double noise_scale = 0.0;

    // x = tanh(gain * M z) + noise_scale * eta
    std::vector<double> apply(std::span<const double> z, std::span<const double> eta) const {
        const std::size_t input_dim = mixing[0].size();
        std::vector<double> x(input_dim, 0.0);
        for (std::size_t c = 0; c < mixing.size(); ++c) {
            const double zc = z[c];
            for (std::size_t d = 0; d < input_dim; ++d) x[d] += mixing[c][d] * zc;
        }
        for (std::size_t d = 0; d < input_dim; ++d) {
            x[d] = round_f32(std::tanh(kTransformGain * x[d]) + noise_scale * eta[d]);
        }
        return x;
    }
};

struct DomainPerturb {
    std::vector<double> matrix;  // latent_dim x latent_dim, row-major (I + s*R)
    std::vector<double> shift;   // latent_dim

    std::vector<double> apply(std::span<const double> z) const {
        const std::size_t dim = shift.size();
        std::vector<double> out(dim, 0.0);
        for (std::size_t r = 0; r < dim; ++r) {
            double acc = shift[r];
            for (std::size_t c = 0; c < dim; ++c) acc += matrix[r * dim + c] * z[c];
            out[r] = acc;
        }
        return out;
    }
};

std::vector<std::vector<double>> sample_class_means(std::size_t count, std::size_t latent_dim, Rng& rng) {
    std::vector<std::vector<double>> means;
    std::size_t attempts = 0;
    while (means.size() < count) {
        if (++attempts > 100000) {
            throw ConfigError("class latent sampling: cannot fit " + std::to_string(count) +
                              " separated classes in latent_dim " + std::to_string(latent_dim));
        }
        std::vector<double> m(latent_dim);
        double norm = 0.0;
        for (auto& v : m) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : m) v *= kLatentRadius / norm;
        bool ok = true;
        for (const auto& other : means) {
            double dist = 0.0;
            for (std::size_t d = 0; d < latent_dim; ++d) dist += (m[d] - other[d]) * (m[d] - other[d]);
            if (std::sqrt(dist) < kMinClassDistance) {
                ok = false;
                break;
            }
        }
        if (ok) means.push_back(std::move(m));
    }
    return means;
}

struct SampleBlock {
    std::vector<double> rows;
    std::vector<int> labels;
    std::size_t count = 0;
};

}  // namespace

std::pair<std::vector<int>, std::vector<int>> split_tr_ti(std::size_t num_classes, std::size_t tr_count,
                                                          std::uint64_t seed) {
    if (tr_count > num_classes) {
        throw ConfigError("split_tr_ti: tr_count " + std::to_string(tr_count) + " exceeds " +
                          std::to_string(num_classes) + " classes");
    }
    std::vector<int> ids(num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) ids[i] = static_cast<int>(i);
    Rng rng(mix_seed(seed, kTagSplit));
    rng.shuffle(ids);
    std::vector<int> tr(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(tr_count));
    std::vector<int> ti(ids.begin() + static_cast<std::ptrdiff_t>(tr_count), ids.end());
    std::sort(tr.begin(), tr.end());
    std::sort(ti.begin(), ti.end());
    return {tr, ti};
}

GeneratedCorpus generate(const SynthSpec& spec) {
    if (spec.num_tr_classes == 0 || spec.num_ti_classes == 0) {
        throw ConfigError("synth spec: need at least one TR and one TI class");
    }
    if (spec.num_domains == 0) throw ConfigError("synth spec: need at least one domain");
    if (spec.latent_dim == 0 || spec.input_dim == 0 || spec.samples_per_class == 0) {
        throw ConfigError("synth spec: dimensions and samples_per_class must be positive");
    }
    if (spec.domain_shift_scale < 0 || spec.modality_gap_scale < 0 || spec.modality_noise_scale < 0 ||
        spec.latent_noise_scale < 0) {
        throw ConfigError("synth spec: scales must be nonnegative");
    }

    const std::size_t total_classes = spec.num_tr_classes + spec.num_ti_classes;
    auto [tr_ids, ti_ids] = split_tr_ti(total_classes, spec.num_tr_classes, spec.seed);

    Rng latent_rng(mix_seed(spec.seed, kTagLatent));
    const auto means = sample_class_means(total_classes, spec.latent_dim, latent_rng);

    // Source-modality map, plus a target-modality map rotated away from it
    // by modality_gap_scale. The perturbation matrix is drawn either way so
    // the stream layout does not depend on the gap value.
    Rng modality_rng(mix_seed(spec.seed, kTagModality));
    Columns source_cols = gaussian_columns(spec.input_dim, spec.latent_dim, modality_rng);
    orthonormalize(source_cols);
    Columns gap_cols = gaussian_columns(spec.input_dim, spec.latent_dim, modality_rng);
    Columns target_cols;
    if (spec.modality_gap_scale == 0.0) {
        target_cols = source_cols;
    } else {
        target_cols = source_cols;
        for (std::size_t c = 0; c < target_cols.size(); ++c)
            for (std::size_t d = 0; d < target_cols[c].size(); ++d)
                target_cols[c][d] += spec.modality_gap_scale * gap_cols[c][d];
        orthonormalize(target_cols);
    }
    ModalityTransform source_tf{std::move(source_cols), spec.modality_noise_scale};
    ModalityTransform target_tf{std::move(target_cols), spec.modality_noise_scale};

    Rng domain_rng(mix_seed(spec.seed, kTagDomain));
    std::vector<DomainPerturb> domains;
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
        DomainPerturb p;
        p.matrix.assign(spec.latent_dim * spec.latent_dim, 0.0);
        const double entry_scale = spec.domain_shift_scale / std::sqrt(static_cast<double>(spec.latent_dim));
        for (std::size_t r = 0; r < spec.latent_dim; ++r)
            for (std::size_t c = 0; c < spec.latent_dim; ++c)
                p.matrix[r * spec.latent_dim + c] = (r == c ? 1.0 : 0.0) + entry_scale * domain_rng.normal();
        p.shift.resize(spec.latent_dim);
        for (auto& v : p.shift) v = spec.domain_shift_scale * domain_rng.normal();
        domains.push_back(std::move(p));
    }

    auto draw_latent = [&](int class_id, Rng& rng) {
        std::vector<double> z = means[static_cast<std::size_t>(class_id)];
        for (auto& v : z) v += spec.latent_noise_scale * rng.normal();
        return z;
    };
    auto draw_eta = [&](Rng& rng) {
        std::vector<double> eta(spec.input_dim);
        for (auto& v : eta) v = rng.normal();
        return eta;
    };

    // Labeled TR block in one modality for one domain. Labels are positions
    // in tr_ids order.
    auto make_tr_block = [&](const ModalityTransform& tf, const DomainPerturb* dp, Rng& rng) {
        SampleBlock block;
        for (std::size_t ci = 0; ci < tr_ids.size(); ++ci) {
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                std::vector<double> z = draw_latent(tr_ids[ci], rng);
                if (dp) z = dp->apply(z);
                const auto eta = draw_eta(rng);
                const auto x = tf.apply(z, eta);
                block.rows.insert(block.rows.end(), x.begin(), x.end());
                block.labels.push_back(static_cast<int>(ci));
                ++block.count;
            }
        }
        return block;
    };

    GeneratedCorpus corpus;
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
        Rng train_rng(mix_seed(spec.seed, kTagSourceTrain + d));
        SampleBlock train = make_tr_block(source_tf, &domains[d], train_rng);
        corpus.source_train.push_back(
            {Tensor::from({train.count, spec.input_dim}, std::move(train.rows)), std::move(train.labels)});
        Rng eval_rng(mix_seed(spec.seed, kTagSourceEval + d));
        SampleBlock eval_block = make_tr_block(source_tf, &domains[d], eval_rng);
        corpus.source_eval.push_back(
            {Tensor::from({eval_block.count, spec.input_dim}, std::move(eval_block.rows)),
             std::move(eval_block.labels)});
    }

    // Target TR data: target modality rendered through domain 0, mirroring
    // adaptation toward one specific domain's sensor.
    {
        Rng target_rng(mix_seed(spec.seed, kTagTarget));
        SampleBlock block = make_tr_block(target_tf, &domains[0], target_rng);
        Tensor x = Tensor::from({block.count, spec.input_dim}, std::move(block.rows));
        corpus.target_unlabeled.x = x;
        corpus.target_eval = {x, std::move(block.labels)};
    }

    // Paired TI data: shared latent and shared input noise per pair; no
    // domain perturbation (external data).
    {
        Rng ti_rng(mix_seed(spec.seed, kTagTi));
        std::vector<double> src_rows, tgt_rows;
        int latent_id = 0;
        for (std::size_t ci = 0; ci < ti_ids.size(); ++ci) {
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                const auto z = draw_latent(ti_ids[ci], ti_rng);
                const auto eta = draw_eta(ti_rng);
                const auto xs = source_tf.apply(z, eta);
                const auto xt = target_tf.apply(z, eta);
                src_rows.insert(src_rows.end(), xs.begin(), xs.end());
                tgt_rows.insert(tgt_rows.end(), xt.begin(), xt.end());
                corpus.ti.latent_ids.push_back(latent_id++);
                corpus.ti.class_ids.push_back(static_cast<int>(ci));
            }
        }
        const std::size_t n_ti = corpus.ti.latent_ids.size();
        corpus.ti.source_x = Tensor::from({n_ti, spec.input_dim}, std::move(src_rows));
        corpus.ti.target_x = Tensor::from({n_ti, spec.input_dim}, std::move(tgt_rows));
    }

    corpus.manifest.spec = spec;
    corpus.manifest.tr_class_ids = tr_ids;
    corpus.manifest.ti_class_ids = ti_ids;
    corpus.manifest.ti_latent_ids = corpus.ti.latent_ids;
    return corpus;
}

namespace {

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t take_u32(const std::string& bytes, std::size_t& pos) {
    if (pos + 4 > bytes.size()) throw IoError("array file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

std::string encode_array(const Tensor& t) {
    std::string out;
    append_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) append_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        append_u32(out, bits);
    }
    return out;
}

Tensor decode_array(const std::string& bytes) {
    std::size_t pos = 0;
    const std::uint32_t ndim = take_u32(bytes, pos);
    if (ndim == 0 || ndim > 8) throw IoError("array file: bad rank " + std::to_string(ndim));
    Shape shape(ndim);
    std::size_t count = 1;
    for (auto& d : shape) {
        d = take_u32(bytes, pos);
        count *= d;
    }
    std::vector<double> values(count);
    for (auto& v : values) {
        const std::uint32_t bits = take_u32(bytes, pos);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    if (pos != bytes.size()) throw IoError("array file: trailing bytes");
    return Tensor::from(std::move(shape), std::move(values));
}

std::string encode_labels(const std::vector<int>& labels) {
    std::ostringstream os;
    for (int v : labels) os << v << "\n";
    return os.str();
}

std::vector<int> decode_labels(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(static_cast<int>(parse_int(line, "label file")));
    }
    return out;
}

}  // namespace

void save_corpus(const GeneratedCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create corpus dir: " + dir);

    std::vector<std::pair<std::string, std::string>> files;
    const auto put = [&](const std::string& name, const std::string& bytes) {
        write_file_bytes(dir + "/" + name, bytes);
        files.emplace_back(name, to_hex(fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()),
                                                 bytes.size()})));
    };

    const auto& spec = corpus.manifest.spec;
    for (std::size_t d = 0; d < corpus.source_train.size(); ++d) {
        const std::string tag = "domain" + std::to_string(d);
        put(tag + "_train_x.bin", encode_array(corpus.source_train[d].x));
        put(tag + "_train_y.txt", encode_labels(corpus.source_train[d].y));
        put(tag + "_eval_x.bin", encode_array(corpus.source_eval[d].x));
        put(tag + "_eval_y.txt", encode_labels(corpus.source_eval[d].y));
    }
    put("target_x.bin", encode_array(corpus.target_unlabeled.x));
    put("target_y.txt", encode_labels(corpus.target_eval.y));
    put("ti_source_x.bin", encode_array(corpus.ti.source_x));
    put("ti_target_x.bin", encode_array(corpus.ti.target_x));
    put("ti_class_y.txt", encode_labels(corpus.ti.class_ids));

    std::ostringstream m;
    m << "format_version = 1\n";
    m << "num_tr_classes = " << spec.num_tr_classes << "\n";
    m << "num_ti_classes = " << spec.num_ti_classes << "\n";
    m << "latent_dim = " << spec.latent_dim << "\n";
    m << "input_dim = " << spec.input_dim << "\n";
    m << "samples_per_class = " << spec.samples_per_class << "\n";
    m << "num_domains = " << spec.num_domains << "\n";
    m << "domain_shift_scale = " << format_double(spec.domain_shift_scale) << "\n";
    m << "modality_gap_scale = " << format_double(spec.modality_gap_scale) << "\n";
    m << "modality_noise_scale = " << format_double(spec.modality_noise_scale) << "\n";
    m << "latent_noise_scale = " << format_double(spec.latent_noise_scale) << "\n";
    m << "seed = " << spec.seed << "\n";
    m << "tr_class_ids = " << join_ints(corpus.manifest.tr_class_ids) << "\n";
    m << "ti_class_ids = " << join_ints(corpus.manifest.ti_class_ids) << "\n";
    m << "ti_latent_ids = " << join_ints(corpus.manifest.ti_latent_ids) << "\n";
    for (const auto& [name, hash] : files) m << "hash." << name << " = " << hash << "\n";
    write_file_bytes(dir + "/corpus_manifest.txt", m.str());
}

GeneratedCorpus load_corpus(const std::string& dir) {
    const std::string manifest_text = read_file_bytes(dir + "/corpus_manifest.txt");
    std::map<std::string, std::string> kv;
    std::istringstream is(manifest_text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw IoError("corpus manifest: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    const auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError("corpus manifest: missing key '" + key + "'");
        return it->second;
    };
    if (need("format_version") != "1") throw VersionError("corpus manifest: unsupported format version");

    GeneratedCorpus corpus;
    SynthSpec spec;
    spec.num_tr_classes = static_cast<std::size_t>(parse_int(need("num_tr_classes"), "manifest"));
    spec.num_ti_classes = static_cast<std::size_t>(parse_int(need("num_ti_classes"), "manifest"));
    spec.latent_dim = static_cast<std::size_t>(parse_int(need("latent_dim"), "manifest"));
    spec.input_dim = static_cast<std::size_t>(parse_int(need("input_dim"), "manifest"));
    spec.samples_per_class = static_cast<std::size_t>(parse_int(need("samples_per_class"), "manifest"));
    spec.num_domains = static_cast<std::size_t>(parse_int(need("num_domains"), "manifest"));
    spec.domain_shift_scale = parse_double(need("domain_shift_scale"), "manifest");
    spec.modality_gap_scale = parse_double(need("modality_gap_scale"), "manifest");
    spec.modality_noise_scale = parse_double(need("modality_noise_scale"), "manifest");
    spec.latent_noise_scale = parse_double(need("latent_noise_scale"), "manifest");
    spec.seed = static_cast<std::uint64_t>(parse_int(need("seed"), "manifest"));
    corpus.manifest.spec = spec;
    corpus.manifest.tr_class_ids = parse_int_list(need("tr_class_ids"));
    corpus.manifest.ti_class_ids = parse_int_list(need("ti_class_ids"));
    corpus.manifest.ti_latent_ids = parse_int_list(need("ti_latent_ids"));

    const auto read_checked = [&](const std::string& name) {
        const std::string bytes = read_file_bytes(dir + "/" + name);
        const std::string expected = need("hash." + name);
        const std::string actual =
            to_hex(fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}));
        if (actual != expected) throw IoError("corpus file " + name + ": hash mismatch");
        corpus.manifest.file_hashes.emplace_back(name, actual);
        return bytes;
    };

    for (std::size_t d = 0; d < spec.num_domains; ++d) {
        const std::string tag = "domain" + std::to_string(d);
        LabeledSet train{decode_array(read_checked(tag + "_train_x.bin")),
                         decode_labels(read_checked(tag + "_train_y.txt"))};
        LabeledSet eval_set{decode_array(read_checked(tag + "_eval_x.bin")),
                            decode_labels(read_checked(tag + "_eval_y.txt"))};
        corpus.source_train.push_back(std::move(train));
        corpus.source_eval.push_back(std::move(eval_set));
    }
    Tensor target_x = decode_array(read_checked("target_x.bin"));
    corpus.target_unlabeled.x = target_x;
    corpus.target_eval = {target_x, decode_labels(read_checked("target_y.txt"))};
    corpus.ti.source_x = decode_array(read_checked("ti_source_x.bin"));
    corpus.ti.target_x = decode_array(read_checked("ti_target_x.bin"));
    corpus.ti.class_ids = decode_labels(read_checked("ti_class_y.txt"));
    corpus.ti.latent_ids = corpus.manifest.ti_latent_ids;
    return corpus;
}

}  // namespace xmodal
