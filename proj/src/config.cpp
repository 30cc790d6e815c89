#include "xmodal/config.hpp"

#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "xmodal/util.hpp"

namespace xmodal {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct KvStore {
    // section -> key -> value, plus consumption tracking for unknown-key
    // detection.
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::map<std::string, std::map<std::string, bool>> used;

    bool has(const std::string& section, const std::string& key) const {
        auto s = sections.find(section);
        return s != sections.end() && s->second.count(key) > 0;
    }
    std::string take(const std::string& section, const std::string& key) {
        used[section][key] = true;
        return sections.at(section).at(key);
    }
    void reject_unused() const {
        for (const auto& [section, kv] : sections) {
            for (const auto& [key, value] : kv) {
                auto s = used.find(section);
                if (s == used.end() || !s->second.count(key)) {
                    throw ConfigError("unknown config key '" + section + "." + key + "'");
                }
            }
        }
    }
};

KvStore read_sections(const std::string& text) {
    KvStore store;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            if (section != "model" && section != "synth" && section != "transfer") {
                throw ConfigError("unknown config section '" + section + "'");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (store.sections[section].count(key)) {
            throw ConfigError("duplicate config key '" + section + "." + key + "'");
        }
        store.sections[section][key] = value;
    }
    return store;
}

void validate(const AppConfig& c) {
    const auto& t = c.transfer;
    if (t.lambda_ti < 0 || t.lambda_d < 0 || t.lambda_pl < 0 || t.lambda_ad < 0 || t.lambda_adv < 0) {
        throw ConfigError("transfer: loss weights must be nonnegative");
    }
    if (t.batch_size < 2) throw ConfigError("transfer.batch_size must be at least 2");
    if (t.source_epochs == 0 || t.transfer_epochs == 0) {
        throw ConfigError("transfer: epoch counts must be positive");
    }
    if (!(t.lr_encoder > 0) || !(t.lr_head_and_zeta > 0)) {
        throw ConfigError("transfer: learning rates must be positive");
    }
    if (t.momentum < 0 || t.momentum >= 1) throw ConfigError("transfer.momentum must be in [0,1)");
    if (t.weight_decay < 0) throw ConfigError("transfer.weight_decay must be nonnegative");
    if (t.label_smoothing < 0 || t.label_smoothing >= 1) {
        throw ConfigError("transfer.label_smoothing must be in [0,1)");
    }
    if (c.model.hidden_dims.empty()) throw ConfigError("model.hidden_dims must be nonempty");
    if (c.model.feature_dim == 0 || c.model.input_dim == 0) {
        throw ConfigError("model: dimensions must be positive");
    }
    if (c.synth.input_dim != c.model.input_dim) {
        throw ConfigError("synth.input_dim must match model.input_dim");
    }
    const auto check_range = [](const char* name, double v) {
        if (v > 0.0 && (v < 0.1 || v > 0.5)) {
            std::fprintf(stderr, "warning: %s = %g is outside the validated (0.1,0.5) range\n", name, v);
        }
    };
    check_range("transfer.lambda_ti", t.lambda_ti);
    check_range("transfer.lambda_d", t.lambda_d);
}

}  // namespace

AppConfig default_config() {
    return {};
}

AppConfig parse_config_text(const std::string& text) {
    KvStore store = read_sections(text);
    AppConfig c;

    const auto take_size = [&](const char* section, const char* key, std::size_t& out) {
        if (store.has(section, key)) {
            const long long v = parse_int(store.take(section, key), std::string(section) + "." + key);
            if (v < 0) throw ConfigError(std::string(section) + "." + key + ": must be nonnegative");
            out = static_cast<std::size_t>(v);
        }
    };
    const auto take_double = [&](const char* section, const char* key, double& out) {
        if (store.has(section, key)) out = parse_double(store.take(section, key), std::string(section) + "." + key);
    };
    const auto take_bool = [&](const char* section, const char* key, bool& out) {
        if (store.has(section, key)) out = parse_bool(store.take(section, key), std::string(section) + "." + key);
    };

    take_size("model", "input_dim", c.model.input_dim);
    if (store.has("model", "hidden_dims")) {
        c.model.hidden_dims = parse_size_list(store.take("model", "hidden_dims"));
    }
    take_size("model", "feature_dim", c.model.feature_dim);
    take_bool("model", "bn_after_each_hidden", c.model.bn_after_each_hidden);

    take_size("synth", "num_tr_classes", c.synth.num_tr_classes);
    take_size("synth", "num_ti_classes", c.synth.num_ti_classes);
    take_size("synth", "latent_dim", c.synth.latent_dim);
    take_size("synth", "input_dim", c.synth.input_dim);
    take_size("synth", "samples_per_class", c.synth.samples_per_class);
    take_size("synth", "num_domains", c.synth.num_domains);
    take_double("synth", "domain_shift_scale", c.synth.domain_shift_scale);
    take_double("synth", "modality_gap_scale", c.synth.modality_gap_scale);
    take_double("synth", "modality_noise_scale", c.synth.modality_noise_scale);
    take_double("synth", "latent_noise_scale", c.synth.latent_noise_scale);
    if (store.has("synth", "seed")) {
        c.synth.seed = static_cast<std::uint64_t>(parse_int(store.take("synth", "seed"), "synth.seed"));
    }

    take_double("transfer", "lambda_ti", c.transfer.lambda_ti);
    take_double("transfer", "lambda_d", c.transfer.lambda_d);
    take_double("transfer", "lambda_pl", c.transfer.lambda_pl);
    take_double("transfer", "lambda_ad", c.transfer.lambda_ad);
    take_double("transfer", "lambda_adv", c.transfer.lambda_adv);
    take_size("transfer", "batch_size", c.transfer.batch_size);
    take_size("transfer", "source_epochs", c.transfer.source_epochs);
    take_size("transfer", "transfer_epochs", c.transfer.transfer_epochs);
    take_double("transfer", "lr_encoder", c.transfer.lr_encoder);
    take_double("transfer", "lr_head_and_zeta", c.transfer.lr_head_and_zeta);
    take_double("transfer", "momentum", c.transfer.momentum);
    take_double("transfer", "weight_decay", c.transfer.weight_decay);
    take_double("transfer", "label_smoothing", c.transfer.label_smoothing);
    if (store.has("transfer", "seed")) {
        c.transfer.seed = static_cast<std::uint64_t>(parse_int(store.take("transfer", "seed"), "transfer.seed"));
    }
    if (store.has("transfer", "pseudo_label_refresh")) {
        const std::string v = store.take("transfer", "pseudo_label_refresh");
        if (v == "per_epoch") c.transfer.pseudo_label_refresh = PseudoLabelRefresh::kPerEpoch;
        else if (v == "per_iteration") c.transfer.pseudo_label_refresh = PseudoLabelRefresh::kPerIteration;
        else throw ConfigError("transfer.pseudo_label_refresh: expected per_epoch or per_iteration, got '" + v + "'");
    }
    if (store.has("transfer", "bn_target_update")) {
        const std::string v = store.take("transfer", "bn_target_update");
        if (v == "frozen") c.transfer.bn_target_update = BnTargetUpdate::kFrozen;
        else if (v == "running") c.transfer.bn_target_update = BnTargetUpdate::kRunning;
        else throw ConfigError("transfer.bn_target_update: expected frozen or running, got '" + v + "'");
    }
    take_bool("transfer", "use_ti_loss", c.transfer.use_ti_loss);
    take_bool("transfer", "use_d_loss", c.transfer.use_d_loss);
    take_bool("transfer", "use_pl_loss", c.transfer.use_pl_loss);

    store.reject_unused();
    validate(c);
    return c;
}

AppConfig parse_config_file(const std::string& path) {
    return parse_config_text(read_file_bytes(path));
}

std::string serialize_config(const AppConfig& c) {
    std::ostringstream os;
    os << "[model]\n";
    os << "input_dim = " << c.model.input_dim << "\n";
    os << "hidden_dims = " << join_sizes(c.model.hidden_dims) << "\n";
    os << "feature_dim = " << c.model.feature_dim << "\n";
    os << "bn_after_each_hidden = " << (c.model.bn_after_each_hidden ? "true" : "false") << "\n";
    os << "\n[synth]\n";
    os << "num_tr_classes = " << c.synth.num_tr_classes << "\n";
    os << "num_ti_classes = " << c.synth.num_ti_classes << "\n";
    os << "latent_dim = " << c.synth.latent_dim << "\n";
    os << "input_dim = " << c.synth.input_dim << "\n";
    os << "samples_per_class = " << c.synth.samples_per_class << "\n";
    os << "num_domains = " << c.synth.num_domains << "\n";
    os << "domain_shift_scale = " << format_double(c.synth.domain_shift_scale) << "\n";
    os << "modality_gap_scale = " << format_double(c.synth.modality_gap_scale) << "\n";
    os << "modality_noise_scale = " << format_double(c.synth.modality_noise_scale) << "\n";
    os << "latent_noise_scale = " << format_double(c.synth.latent_noise_scale) << "\n";
    os << "seed = " << c.synth.seed << "\n";
    os << "\n[transfer]\n";
    os << "lambda_ti = " << format_double(c.transfer.lambda_ti) << "\n";
    os << "lambda_d = " << format_double(c.transfer.lambda_d) << "\n";
    os << "lambda_pl = " << format_double(c.transfer.lambda_pl) << "\n";
    os << "lambda_ad = " << format_double(c.transfer.lambda_ad) << "\n";
    os << "lambda_adv = " << format_double(c.transfer.lambda_adv) << "\n";
    os << "batch_size = " << c.transfer.batch_size << "\n";
    os << "source_epochs = " << c.transfer.source_epochs << "\n";
    os << "transfer_epochs = " << c.transfer.transfer_epochs << "\n";
    os << "lr_encoder = " << format_double(c.transfer.lr_encoder) << "\n";
    os << "lr_head_and_zeta = " << format_double(c.transfer.lr_head_and_zeta) << "\n";
    os << "momentum = " << format_double(c.transfer.momentum) << "\n";
    os << "weight_decay = " << format_double(c.transfer.weight_decay) << "\n";
    os << "label_smoothing = " << format_double(c.transfer.label_smoothing) << "\n";
    os << "seed = " << c.transfer.seed << "\n";
    os << "pseudo_label_refresh = "
       << (c.transfer.pseudo_label_refresh == PseudoLabelRefresh::kPerEpoch ? "per_epoch" : "per_iteration")
       << "\n";
    os << "bn_target_update = "
       << (c.transfer.bn_target_update == BnTargetUpdate::kFrozen ? "frozen" : "running") << "\n";
    os << "use_ti_loss = " << (c.transfer.use_ti_loss ? "true" : "false") << "\n";
    os << "use_d_loss = " << (c.transfer.use_d_loss ? "true" : "false") << "\n";
    os << "use_pl_loss = " << (c.transfer.use_pl_loss ? "true" : "false") << "\n";
    return os.str();
}

}  // namespace xmodal
