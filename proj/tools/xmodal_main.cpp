#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/config.hpp"
#include "xmodal/metrics.hpp"
#include "xmodal/run_manifest.hpp"
#include "xmodal/synth_data.hpp"
#include "xmodal/transfer.hpp"
#include "xmodal/util.hpp"

namespace fs = std::filesystem;
using namespace xmodal;

namespace {

// Exit codes: 0 ok, 2 config, 3 io, 4 version, 5 contract (see README).
enum ExitCode { kOk = 0, kConfigError = 2, kIoError = 3, kVersionError = 4, kContractError = 5 };

struct CommonArgs {
    std::string config_path;
    std::string corpus_dir;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_corpus, bool with_out) {
    cmd->add_option("--config", args.config_path, "configuration file (defaults apply when omitted)");
    if (with_corpus) {
        cmd->add_option("--corpus", args.corpus_dir, "corpus directory (XMODAL_DATA_ROOT when omitted)");
    }
    if (with_out) cmd->add_option("--out", args.out, "output path")->required();
    cmd->add_option("--seed", args.seed, "seed override for both data generation and training");
    cmd->add_flag("--quiet", args.quiet, "suppress informational output");
}

AppConfig load_config(CommonArgs& args) {
    AppConfig cfg = args.config_path.empty() ? default_config() : parse_config_file(args.config_path);
    if (args.seed) {
        cfg.transfer.seed = *args.seed;
        cfg.synth.seed = *args.seed;
    }
    return cfg;
}

std::string resolve_corpus_dir(const CommonArgs& args) {
    if (!args.corpus_dir.empty()) return args.corpus_dir;
    const char* root = std::getenv("XMODAL_DATA_ROOT");
    if (root && *root) return root;
    throw ConfigError("no corpus directory: pass --corpus or set XMODAL_DATA_ROOT");
}

void info(const CommonArgs& args, const std::string& msg) {
    if (!args.quiet) std::printf("%s\n", msg.c_str());
}

RunManifest start_manifest(const std::string& command, const AppConfig& cfg, const CommonArgs& args) {
    RunManifest m;
    m.command = command;
    m.config_snapshot = serialize_config(cfg);
    m.seed = cfg.transfer.seed;
    m.started_at = now_iso8601();
    if (!args.config_path.empty()) m.input_hashes.emplace_back(args.config_path, file_hash_hex(args.config_path));
    return m;
}

void finish_manifest(RunManifest& m, const std::string& path) {
    m.finished_at = now_iso8601();
    write_run_manifest(m, path);
}

std::vector<SourceModel> load_source_checkpoints(const std::vector<std::string>& paths, RunManifest& manifest) {
    std::vector<SourceModel> sources;
    for (const auto& path : paths) {
        manifest.input_hashes.emplace_back(path, file_hash_hex(path));
        Checkpoint ckpt = load_checkpoint(path);
        if (ckpt.kind != Checkpoint::Kind::kSource) {
            throw ContractError("checkpoint " + path + " is not a single source model");
        }
        sources.push_back(std::move(ckpt.models[0]));
    }
    return sources;
}

int cmd_gen_data(CommonArgs& args) {
    AppConfig cfg = load_config(args);
    RunManifest manifest = start_manifest("gen-data", cfg, args);
    GeneratedCorpus corpus = generate(cfg.synth);
    save_corpus(corpus, args.out);
    manifest.output_paths.push_back(args.out);
    finish_manifest(manifest, args.out + "/run_manifest.txt");
    info(args, "corpus written to " + args.out);
    return kOk;
}

int cmd_train_source(CommonArgs& args, std::size_t domain) {
    AppConfig cfg = load_config(args);
    const std::string corpus_dir = resolve_corpus_dir(args);
    RunManifest manifest = start_manifest("train-source", cfg, args);
    manifest.input_hashes.emplace_back(corpus_dir + "/corpus_manifest.txt",
                                       file_hash_hex(corpus_dir + "/corpus_manifest.txt"));
    GeneratedCorpus corpus = load_corpus(corpus_dir);
    if (domain >= corpus.source_train.size()) {
        throw ConfigError("domain " + std::to_string(domain) + " out of range, corpus has " +
                          std::to_string(corpus.source_train.size()) + " domains");
    }
    const std::size_t num_classes = cfg.synth.num_tr_classes;
    const std::uint64_t seed = mix_seed(cfg.transfer.seed, 1000 + domain);
    SourceModel model =
        train_source(corpus.source_train[domain], cfg.model, num_classes, cfg.transfer, seed);
    save_checkpoint(model, args.out);
    manifest.output_paths.push_back(args.out);
    finish_manifest(manifest, args.out + ".manifest.txt");
    const double train_acc = evaluate(model, corpus.source_train[domain]);
    const double eval_acc = evaluate(model, corpus.source_eval[domain]);
    info(args, "domain " + std::to_string(domain) + ": train accuracy " + format_double(train_acc) +
                   ", eval accuracy " + format_double(eval_acc));
    return kOk;
}

int cmd_transfer(CommonArgs& args, const std::vector<std::string>& checkpoints, bool unpaired) {
    AppConfig cfg = load_config(args);
    const std::string corpus_dir = resolve_corpus_dir(args);
    RunManifest manifest = start_manifest(unpaired ? "transfer --unpaired" : "transfer", cfg, args);
    manifest.input_hashes.emplace_back(corpus_dir + "/corpus_manifest.txt",
                                       file_hash_hex(corpus_dir + "/corpus_manifest.txt"));
    GeneratedCorpus corpus = load_corpus(corpus_dir);
    std::vector<SourceModel> sources = load_source_checkpoints(checkpoints, manifest);

    fs::create_directories(args.out);
    std::vector<std::pair<std::size_t, double>> per_epoch;
    EpochCallback cb = [&](std::size_t epoch, FusedTargetModel& current) {
        per_epoch.emplace_back(epoch, evaluate(current, corpus.target_eval));
    };
    TransferResult result =
        unpaired ? transfer_unpaired(sources, corpus.target_unlabeled, corpus.ti.source_x, corpus.ti.target_x,
                                     cfg.transfer, cb)
                 : transfer(sources, corpus.target_unlabeled, corpus.ti, cfg.transfer, cb);
    for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    const std::string fused_path = args.out + "/fused.ckpt";
    save_checkpoint(result.model, fused_path);
    write_metrics_csv(args.out + "/metrics.csv", result.history, sources.size());
    write_accuracy_csv(args.out + "/accuracy.csv", per_epoch);
    manifest.output_paths = {fused_path, args.out + "/metrics.csv", args.out + "/accuracy.csv"};
    finish_manifest(manifest, args.out + "/run_manifest.txt");

    std::string zeta_text;
    for (double z : result.final_zeta) zeta_text += (zeta_text.empty() ? "" : ",") + format_double(z);
    info(args, "final zeta = [" + zeta_text + "], target accuracy = " +
                   format_double(per_epoch.empty() ? 0.0 : per_epoch.back().second));
    return kOk;
}

int cmd_eval(CommonArgs& args, const std::string& checkpoint_path, const std::string& split,
             std::string log_path) {
    const std::string corpus_dir = resolve_corpus_dir(args);
    GeneratedCorpus corpus = load_corpus(corpus_dir);
    Checkpoint ckpt = load_checkpoint(checkpoint_path);

    LabeledSet heldout;
    if (split == "target") {
        heldout = corpus.target_eval;
    } else if (split.rfind("source-train:", 0) == 0 || split.rfind("source-eval:", 0) == 0) {
        const bool train_split = split.rfind("source-train:", 0) == 0;
        const std::size_t d = static_cast<std::size_t>(
            parse_int(split.substr(split.find(':') + 1), "eval split domain"));
        const auto& sets = train_split ? corpus.source_train : corpus.source_eval;
        if (d >= sets.size()) throw ConfigError("eval split domain out of range");
        heldout = sets[d];
    } else {
        throw ConfigError("unknown eval split '" + split + "' (target | source-train:K | source-eval:K)");
    }

    double acc = 0.0;
    if (ckpt.kind == Checkpoint::Kind::kFused) {
        FusedTargetModel fused = ckpt.fused();
        acc = evaluate(fused, heldout);
    } else {
        acc = evaluate(ckpt.single(), heldout);
    }
    std::printf("accuracy = %s\n", format_double(acc).c_str());

    if (log_path.empty()) log_path = checkpoint_path + ".eval_log.csv";
    const bool fresh = !fs::exists(log_path);
    std::string row = (fresh ? std::string("checkpoint,corpus,split,accuracy\n") : std::string()) +
                      checkpoint_path + "," + corpus_dir + "," + split + "," + format_double(acc) + "\n";
    std::string existing = fresh ? "" : read_file_bytes(log_path);
    write_file_bytes(log_path, existing + row);
    return kOk;
}

int cmd_ablate(CommonArgs& args, const std::vector<std::string>& checkpoints) {
    AppConfig cfg = load_config(args);
    const std::string corpus_dir = resolve_corpus_dir(args);
    RunManifest manifest = start_manifest("ablate", cfg, args);
    manifest.input_hashes.emplace_back(corpus_dir + "/corpus_manifest.txt",
                                       file_hash_hex(corpus_dir + "/corpus_manifest.txt"));
    GeneratedCorpus corpus = load_corpus(corpus_dir);
    std::vector<SourceModel> sources = load_source_checkpoints(checkpoints, manifest);

    fs::create_directories(args.out);
    auto rows = ablate(sources, corpus.target_unlabeled, corpus.target_eval, corpus.ti, cfg.transfer);
    const std::string table_path = args.out + "/ablation_table.csv";
    write_ablation_csv(table_path, rows);
    manifest.output_paths = {table_path};
    finish_manifest(manifest, args.out + "/run_manifest.txt");
    for (const auto& row : rows) info(args, row.arm + ": " + format_double(row.accuracy));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"source-free cross-modal knowledge transfer workbench"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired-modality corpus");
    add_common(gen, gen_args, false, true);

    CommonArgs train_args;
    std::size_t train_domain = 0;
    auto* train = app.add_subcommand("train-source", "train one source-domain classifier");
    add_common(train, train_args, true, true);
    train->add_option("--domain", train_domain, "source domain index")->required();

    CommonArgs transfer_args;
    std::vector<std::string> transfer_ckpts;
    bool unpaired = false;
    auto* xfer = app.add_subcommand("transfer", "adapt source checkpoints to the unlabeled target modality");
    add_common(xfer, transfer_args, true, true);
    xfer->add_option("checkpoints", transfer_ckpts, "source model checkpoints")->required()->expected(-1);
    xfer->add_flag("--unpaired", unpaired, "treat TI data as unpaired and use the adversarial variant");

    CommonArgs eval_args;
    std::string eval_ckpt, eval_split = "target", eval_log;
    auto* evaluate_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
    add_common(evaluate_cmd, eval_args, true, false);
    evaluate_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
    evaluate_cmd->add_option("--split", eval_split, "target | source-train:K | source-eval:K");
    evaluate_cmd->add_option("--log", eval_log, "accuracy log file (default <checkpoint>.eval_log.csv)");

    CommonArgs ablate_args;
    std::vector<std::string> ablate_ckpts;
    auto* abl = app.add_subcommand("ablate", "run the four loss-combination arms and tabulate accuracy");
    add_common(abl, ablate_args, true, true);
    abl->add_option("checkpoints", ablate_ckpts, "source model checkpoints")->required()->expected(-1);

    auto* print_cfg = app.add_subcommand("print-config", "print the default configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return kConfigError;
    }

    try {
        if (*gen) return cmd_gen_data(gen_args);
        if (*train) return cmd_train_source(train_args, train_domain);
        if (*xfer) return cmd_transfer(transfer_args, transfer_ckpts, unpaired);
        if (*evaluate_cmd) return cmd_eval(eval_args, eval_ckpt, eval_split, eval_log);
        if (*abl) return cmd_ablate(ablate_args, ablate_ckpts);
        if (*print_cfg) {
            std::fputs(serialize_config(default_config()).c_str(), stdout);
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return kConfigError;
    } catch (const VersionError& e) {
        std::fprintf(stderr, "error: version: %s\n", e.what());
        return kVersionError;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: io: %s\n", e.what());
        return kIoError;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: contract: %s\n", e.what());
        return kContractError;
    }
    return kOk;
}
