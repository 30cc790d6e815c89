#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "test_support.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/model.hpp"
#include "xmodal/optim.hpp"
#include "xmodal/util.hpp"

using namespace xmodal;
using xmodal::testing::random_tensor;

namespace {

EncoderSpec tiny_spec() {
    EncoderSpec spec;
    spec.input_dim = 5;
    spec.hidden_dims = {6, 4};
    spec.feature_dim = 3;
    return spec;
}

SourceModel tiny_model(std::uint64_t seed = 42) {
    Rng rng(seed);
    return make_source_model(tiny_spec(), 4, rng);
}

void zero_parameters(SourceModel& m) {
    for (auto& l : m.encoder.hidden) {
        for (auto& v : l.weight.values()) v = 0;
        for (auto& v : l.bias.values()) v = 0;
    }
    for (auto& v : m.encoder.output.weight.values()) v = 0;
    for (auto& v : m.encoder.output.bias.values()) v = 0;
    for (auto& v : m.classifier.weight.values()) v = 0;
    for (auto& v : m.classifier.bias.values()) v = 0;
}

std::string temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "xmodal_model_test";
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("zero encoder maps any batch to zero features") {
    SourceModel m = tiny_model();
    zero_parameters(m);
    Rng rng(1);
    Tensor batch = random_tensor({3, 5}, rng, -2, 2, false);
    Tensor feats = encode(m, nullptr, batch, Mode::kEval).features;
    for (double v : feats.values()) CHECK(v == 0.0);
}

TEST_CASE("encode is deterministic") {
    SourceModel m = tiny_model();
    Rng rng(2);
    Tensor batch = random_tensor({4, 5}, rng, -1, 1, false);
    Tensor f1 = encode(m, nullptr, batch, Mode::kEval).features;
    Tensor f2 = encode(m, nullptr, batch, Mode::kEval).features;
    for (std::size_t i = 0; i < f1.size(); ++i) CHECK(f1.values()[i] == f2.values()[i]);
}

TEST_CASE("encode rejects wrong input width") {
    SourceModel m = tiny_model();
    Tensor batch = Tensor::zeros({2, 7});
    CHECK_THROWS_AS(encode(m, nullptr, batch, Mode::kEval), ContractError);
}

TEST_CASE("train and eval modes agree when batch statistics equal running statistics") {
    SourceModel m = tiny_model();
    Rng rng(3);
    Tensor batch = random_tensor({8, 5}, rng, -1, 1, false);

    // Plant the actual batch statistics of each BN input as running stats,
    // walking the sites in order.
    Tensor h = batch;
    for (std::size_t i = 0; i < m.encoder.hidden.size(); ++i) {
        Tensor pre = linear_forward(nullptr, h, m.encoder.hidden[i].weight, m.encoder.hidden[i].bias);
        const std::size_t b = pre.rows(), c = pre.cols();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mean = 0;
            for (std::size_t r = 0; r < b; ++r) mean += pre.values()[r * c + ch];
            mean /= static_cast<double>(b);
            double var = 0;
            for (std::size_t r = 0; r < b; ++r) {
                const double d = pre.values()[r * c + ch] - mean;
                var += d * d;
            }
            var /= static_cast<double>(b);
            m.encoder.bn[i].running_mean[ch] = mean;
            m.encoder.bn[i].running_var[ch] = var;
        }
        h = relu(nullptr, batchnorm_forward(nullptr, pre, m.encoder.bn[i], Mode::kEval).y);
    }

    Tensor train_f = encode(m, nullptr, batch, Mode::kTrain, false).features;
    Tensor eval_f = encode(m, nullptr, batch, Mode::kEval).features;
    for (std::size_t i = 0; i < train_f.size(); ++i) {
        CHECK(train_f.values()[i] == doctest::Approx(eval_f.values()[i]).epsilon(1e-6));
    }

    // And a generic batch disagrees (batch stats != running stats).
    SourceModel fresh = tiny_model();
    Tensor tf = encode(fresh, nullptr, batch, Mode::kTrain, false).features;
    Tensor ef = encode(fresh, nullptr, batch, Mode::kEval).features;
    double max_diff = 0;
    for (std::size_t i = 0; i < tf.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(tf.values()[i] - ef.values()[i]));
    }
    CHECK(max_diff > 1e-3);
}

TEST_CASE("zero model predicts uniform probabilities") {
    SourceModel m = tiny_model();
    zero_parameters(m);
    Tensor batch = Tensor::zeros({3, 5});
    Tensor probs = predict(m, nullptr, batch, Mode::kEval);
    for (double v : probs.values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("argmax is invariant to a constant shift of the classifier bias") {
    SourceModel m = tiny_model(7);
    Rng rng(8);
    Tensor batch = random_tensor({6, 5}, rng, -1, 1, false);
    Tensor before = predict(m, nullptr, batch, Mode::kEval);
    for (auto& v : m.classifier.bias.values()) v += 3.7;
    Tensor after = predict(m, nullptr, batch, Mode::kEval);
    for (std::size_t i = 0; i < 6; ++i) {
        std::size_t arg_before = 0, arg_after = 0;
        for (std::size_t j = 1; j < 4; ++j) {
            if (before.values()[i * 4 + j] > before.values()[i * 4 + arg_before]) arg_before = j;
            if (after.values()[i * 4 + j] > after.values()[i * 4 + arg_after]) arg_after = j;
        }
        CHECK(arg_before == arg_after);
    }
}

TEST_CASE("predict matches an independent linear+softmax evaluation") {
    SourceModel m = tiny_model(9);
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor batch = random_tensor({2, 5}, rng, -1, 1, false);
        Tensor feats = encode(m, nullptr, batch, Mode::kEval).features;
        Tensor probs = classify(m, nullptr, feats);
        // Re-derive by hand from the feature vectors.
        for (std::size_t i = 0; i < 2; ++i) {
            double logits[4];
            for (std::size_t j = 0; j < 4; ++j) {
                double acc = m.classifier.bias.values()[j];
                for (std::size_t d = 0; d < 3; ++d) {
                    acc += feats.values()[i * 3 + d] * m.classifier.weight.values()[d * 4 + j];
                }
                logits[j] = acc;
            }
            double mx = *std::max_element(logits, logits + 4);
            double denom = 0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(std::abs(probs.values()[i * 4 + j] - logits[j] / denom) < 1e-10);
            }
        }
    }
}

TEST_CASE("fuse_predict combines probability rows") {
    SourceModel a = tiny_model(20);
    SourceModel b = tiny_model(21);
    Rng rng(22);
    Tensor batch = random_tensor({5, 5}, rng, -1, 1, false);

    SUBCASE("identical models collapse to a single prediction") {
        std::vector<SourceModel> models = {clone_model(a), clone_model(a), clone_model(a)};
        MixingWeights zeta = MixingWeights::uniform(3);
        zeta.raw.values()[0] = 0.2;
        zeta.raw.values()[1] = 0.5;
        zeta.raw.values()[2] = 0.3;
        Tensor fused = fuse_predict(models, zeta, nullptr, batch, Mode::kEval);
        Tensor single = predict(a, nullptr, batch, Mode::kEval);
        for (std::size_t i = 0; i < fused.size(); ++i) {
            CHECK(fused.values()[i] == doctest::Approx(single.values()[i]).epsilon(1e-12));
        }
    }

    SUBCASE("one-hot zeta picks out one model") {
        std::vector<SourceModel> models = {clone_model(a), clone_model(b)};
        MixingWeights zeta = MixingWeights::uniform(2);
        zeta.raw.values()[0] = 0.0;
        zeta.raw.values()[1] = 1.0;
        Tensor fused = fuse_predict(models, zeta, nullptr, batch, Mode::kEval);
        Tensor expected = predict(b, nullptr, batch, Mode::kEval);
        for (std::size_t i = 0; i < fused.size(); ++i) {
            CHECK(fused.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-15));
        }
    }

    SUBCASE("0.3/0.7 mixture verified elementwise") {
        std::vector<SourceModel> models = {clone_model(a), clone_model(b)};
        MixingWeights zeta = MixingWeights::uniform(2);
        zeta.raw.values()[0] = 0.3;
        zeta.raw.values()[1] = 0.7;
        Tensor fused = fuse_predict(models, zeta, nullptr, batch, Mode::kEval);
        Tensor pa = predict(a, nullptr, batch, Mode::kEval);
        Tensor pb = predict(b, nullptr, batch, Mode::kEval);
        for (std::size_t i = 0; i < fused.size(); ++i) {
            CHECK(fused.values()[i] == doctest::Approx(0.3 * pa.values()[i] + 0.7 * pb.values()[i]));
        }
    }

    SUBCASE("rows sum to one for random simplex weights") {
        std::vector<SourceModel> models = {clone_model(a), clone_model(b)};
        for (int trial = 0; trial < 10; ++trial) {
            MixingWeights zeta = MixingWeights::uniform(2);
            const double w = rng.uniform(0, 1);
            zeta.raw.values()[0] = w;
            zeta.raw.values()[1] = 1.0 - w;
            Tensor fused = fuse_predict(models, zeta, nullptr, batch, Mode::kEval);
            for (std::size_t i = 0; i < 5; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < 4; ++j) s += fused.values()[i * 4 + j];
                CHECK(std::abs(s - 1.0) < 1e-9);
            }
        }
    }

    SUBCASE("single-model fusion with weight one is bitwise predict") {
        std::vector<SourceModel> models = {clone_model(a)};
        MixingWeights zeta = MixingWeights::uniform(1);
        Tensor fused = fuse_predict(models, zeta, nullptr, batch, Mode::kEval);
        Tensor single = predict(a, nullptr, batch, Mode::kEval);
        CHECK(std::memcmp(fused.values().data(), single.values().data(), fused.size() * sizeof(double)) == 0);
    }

    SUBCASE("model count vs zeta length mismatch") {
        std::vector<SourceModel> models = {clone_model(a), clone_model(b)};
        MixingWeights zeta = MixingWeights::uniform(3);
        CHECK_THROWS_AS(fuse_predict(models, zeta, nullptr, batch, Mode::kEval), ContractError);
    }
}

TEST_CASE("bn snapshot starts at the initialization convention and stays immutable") {
    SourceModel m = tiny_model(30);
    BnStatsSnapshot snap = extract_bn_stats(m);
    REQUIRE(snap.layers.size() == 2);
    for (const auto& layer : snap.layers) {
        for (double v : layer.mean) CHECK(v == 0.0);
        for (double v : layer.var) CHECK(v == 1.0);
    }

    // Ten train-mode passes mutate the model's running stats, not the snapshot.
    Rng rng(31);
    for (int i = 0; i < 10; ++i) {
        Tensor batch = random_tensor({8, 5}, rng, -1, 1, false);
        encode(m, nullptr, batch, Mode::kTrain, true);
    }
    CHECK(m.encoder.bn[0].running_mean != snap.layers[0].mean);
    for (const auto& layer : snap.layers) {
        for (double v : layer.mean) CHECK(v == 0.0);
        for (double v : layer.var) CHECK(v == 1.0);
    }
}

TEST_CASE("running mean converges to the pre-BN activation of a constant input") {
    SourceModel m = tiny_model(33);
    std::vector<double> c(5);
    Rng rng(34);
    for (auto& v : c) v = rng.uniform(-1, 1);
    std::vector<double> row = c;
    std::vector<double> batch_rows;
    for (int i = 0; i < 4; ++i) batch_rows.insert(batch_rows.end(), row.begin(), row.end());
    Tensor batch = Tensor::from({4, 5}, batch_rows);

    // Analytic first-layer activation of c under the fixed weights.
    std::vector<double> expected(6, 0.0);
    for (std::size_t j = 0; j < 6; ++j) {
        double acc = m.encoder.hidden[0].bias.values()[j];
        for (std::size_t d = 0; d < 5; ++d) acc += c[d] * m.encoder.hidden[0].weight.values()[d * 6 + j];
        expected[j] = acc;
    }

    for (int step = 0; step < 100; ++step) encode(m, nullptr, batch, Mode::kTrain, true);
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(m.encoder.bn[0].running_mean[j] - expected[j]) < 1e-3);
    }
}

TEST_CASE("checkpoint round-trips are bit-exact") {
    const std::string dir = temp_dir();
    SourceModel m = tiny_model(40);
    // Perturb running stats so the checkpoint carries non-default values.
    Rng rng(41);
    for (int i = 0; i < 5; ++i) encode(m, nullptr, random_tensor({8, 5}, rng, -1, 1, false), Mode::kTrain, true);

    const std::string p1 = dir + "/single.ckpt";
    save_checkpoint(m, p1);
    Checkpoint loaded = load_checkpoint(p1);
    SourceModel& r = loaded.single();

    CHECK(r.encoder.spec == m.encoder.spec);
    CHECK(r.num_classes == m.num_classes);
    const auto bitwise_equal = [](const Tensor& a, const Tensor& b) {
        return a.size() == b.size() &&
               std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
    };
    CHECK(bitwise_equal(r.encoder.hidden[0].weight, m.encoder.hidden[0].weight));
    CHECK(bitwise_equal(r.encoder.output.weight, m.encoder.output.weight));
    CHECK(bitwise_equal(r.classifier.weight, m.classifier.weight));
    CHECK(r.encoder.bn[0].running_mean == m.encoder.bn[0].running_mean);
    CHECK(r.encoder.bn[1].running_var == m.encoder.bn[1].running_var);

    // save -> load -> save produces byte-identical files
    const std::string p2 = dir + "/single2.ckpt";
    save_checkpoint(r, p2);
    CHECK(read_file_bytes(p1) == read_file_bytes(p2));
}

TEST_CASE("fused checkpoint restores zeta exactly") {
    const std::string dir = temp_dir();
    FusedTargetModel fused;
    fused.models = {tiny_model(50), tiny_model(51)};
    fused.zeta = MixingWeights::uniform(2);
    fused.zeta.raw.values()[0] = 0.3;
    fused.zeta.raw.values()[1] = 0.7;
    fused.zeta.projected = {0.3, 0.7};
    const std::string path = dir + "/fused.ckpt";
    save_checkpoint(fused, path);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.kind == Checkpoint::Kind::kFused);
    REQUIRE(loaded.zeta.size() == 2);
    CHECK(loaded.zeta[0] == 0.3);
    CHECK(loaded.zeta[1] == 0.7);
    FusedTargetModel back = loaded.fused();
    CHECK(back.zeta.raw.values()[0] == 0.3);
    CHECK(back.zeta.raw.values()[1] == 0.7);
}

TEST_CASE("corrupted checkpoints are rejected without partial loads") {
    const std::string dir = temp_dir();
    SourceModel m = tiny_model(60);
    const std::string path = dir + "/corrupt.ckpt";
    save_checkpoint(m, path);
    const std::string bytes = read_file_bytes(path);

    SUBCASE("truncation fails the checksum") {
        write_file_bytes(path, bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), IoError);
    }

    SUBCASE("bit flip fails the checksum") {
        std::string flipped = bytes;
        flipped[bytes.size() / 2] ^= 0x40;
        write_file_bytes(path, flipped);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), IoError);
    }

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        write_file_bytes(path, bad);
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }

    SUBCASE("future version is a version error") {
        std::string bumped = bytes;
        bumped[4] = 9;  // version field, little-endian
        // refresh the trailing CRC so only the version check can fire
        const std::string body = bumped.substr(0, bumped.size() - 4);
        const auto crc = static_cast<std::uint32_t>(
            ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
        for (int i = 0; i < 4; ++i) bumped[bumped.size() - 4 + i] = static_cast<char>((crc >> (8 * i)) & 0xff);
        write_file_bytes(path, bumped);
        CHECK_THROWS_AS(load_checkpoint(path), VersionError);
    }
}

TEST_CASE("frozen classifier stays bitwise fixed under encoder-only optimization") {
    SourceModel m = tiny_model(70);
    m.frozen_classifier = true;
    std::vector<double> before(m.classifier.weight.values().begin(), m.classifier.weight.values().end());

    std::vector<ParamGroup> groups{{encoder_params(m.encoder), 0.05}};
    SgdOptimizer opt(std::move(groups), 0.9, 1e-3);
    Rng rng(71);
    for (int step = 0; step < 10; ++step) {
        Tape tape;
        Tensor batch = random_tensor({6, 5}, rng, -1, 1, false);
        Tensor probs = predict(m, &tape, batch, Mode::kTrain);
        Tensor loss = sum_all(&tape, square(&tape, probs));
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }
    CHECK(std::memcmp(before.data(), m.classifier.weight.values().data(), before.size() * sizeof(double)) == 0);
}
