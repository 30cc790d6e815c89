#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "xmodal/config.hpp"

using namespace xmodal;

TEST_CASE("defaults carry the documented values") {
    AppConfig c = default_config();
    CHECK(c.transfer.lambda_ti == 0.3);
    CHECK(c.transfer.lambda_d == 0.3);
    CHECK(c.transfer.lambda_pl == 0.3);
    CHECK(c.transfer.lambda_ad == 10.0);
    CHECK(c.transfer.lambda_adv == 0.2);
    CHECK(c.transfer.batch_size == 32);
    CHECK(c.transfer.source_epochs == 20);
    CHECK(c.transfer.transfer_epochs == 15);
    CHECK(c.transfer.lr_encoder == 1e-3);
    CHECK(c.transfer.lr_head_and_zeta == 1e-2);
    CHECK(c.transfer.momentum == 0.9);
    CHECK(c.transfer.weight_decay == 1e-3);
    CHECK(c.transfer.label_smoothing == 0.1);
    CHECK(c.transfer.pseudo_label_refresh == PseudoLabelRefresh::kPerEpoch);
    CHECK(c.transfer.bn_target_update == BnTargetUpdate::kFrozen);
    CHECK(c.model.input_dim == 64);
    CHECK(c.model.hidden_dims == std::vector<std::size_t>{64, 64});
    CHECK(c.model.feature_dim == 32);
    CHECK(c.synth.num_tr_classes == 6);
    CHECK(c.synth.num_ti_classes == 6);
    CHECK(c.synth.num_domains == 2);
    CHECK(c.synth.input_dim == 64);
}

TEST_CASE("parse -> serialize -> parse is an identity") {
    AppConfig base = default_config();
    base.transfer.lambda_ti = 0.17;
    base.transfer.seed = 991;
    base.transfer.pseudo_label_refresh = PseudoLabelRefresh::kPerIteration;
    base.transfer.bn_target_update = BnTargetUpdate::kRunning;
    base.model.hidden_dims = {48, 24};
    base.synth.modality_gap_scale = 0.625;
    const std::string text = serialize_config(base);
    AppConfig parsed = parse_config_text(text);
    CHECK(parsed == base);
    CHECK(serialize_config(parsed) == text);
}

TEST_CASE("partial configs keep defaults for unmentioned keys") {
    AppConfig c = parse_config_text("[transfer]\nlambda_ti = 0.4\n");
    CHECK(c.transfer.lambda_ti == 0.4);
    CHECK(c.transfer.lambda_d == 0.3);
    CHECK(c.model.feature_dim == 32);
}

TEST_CASE("unknown keys are rejected by name") {
    CHECK_THROWS_WITH_AS(parse_config_text("[transfer]\nlambda_tl = 0.3\n"),
                         doctest::Contains("transfer.lambda_tl"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("[nonsense]\nx = 1\n"), doctest::Contains("nonsense"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("lambda_ti = 0.3\n"), ConfigError);  // key outside a section
    CHECK_THROWS_AS(parse_config_text("[transfer]\nlambda_ti = 0.3\nlambda_ti = 0.4\n"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
    CHECK_THROWS_AS(parse_config_text("[transfer]\nlambda_ti = -0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[transfer]\nbatch_size = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[transfer]\nmomentum = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[transfer]\nlabel_smoothing = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[transfer]\npseudo_label_refresh = sometimes\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[transfer]\nbn_target_update = thawed\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[transfer]\nlambda_ti = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[model]\nhidden_dims = \n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[synth]\ninput_dim = 32\n"), ConfigError);  // must match model
}

TEST_CASE("comments and blank lines are tolerated") {
    AppConfig c = parse_config_text("# a comment\n\n[transfer]\n# another\nseed = 5\n");
    CHECK(c.transfer.seed == 5);
}
