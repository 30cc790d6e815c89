#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/synth_data.hpp"

namespace xmodal {

enum class PseudoLabelRefresh { kPerEpoch, kPerIteration };
enum class BnTargetUpdate { kFrozen, kRunning };

struct TransferConfig {
    double lambda_ti = 0.3;
    double lambda_d = 0.3;
    double lambda_pl = 0.3;
    double lambda_ad = 10.0;
    double lambda_adv = 0.2;
    std::size_t batch_size = 32;
    std::size_t source_epochs = 20;
    std::size_t transfer_epochs = 15;
    double lr_encoder = 1e-3;
    double lr_head_and_zeta = 1e-2;
    double momentum = 0.9;
    double weight_decay = 1e-3;
    double label_smoothing = 0.1;
    std::uint64_t seed = 7;
    PseudoLabelRefresh pseudo_label_refresh = PseudoLabelRefresh::kPerEpoch;
    BnTargetUpdate bn_target_update = BnTargetUpdate::kFrozen;
    bool use_ti_loss = true;
    bool use_d_loss = true;
    bool use_pl_loss = true;

    bool operator==(const TransferConfig&) const = default;
};

// Scheduled learning rate: theta0 * (1 + 10 p)^(-3/4), p in [0,1].
double lr_schedule(double theta0, double p);

// Cross entropy against smoothed targets (1-alpha) * onehot + alpha/N;
// alpha = 0 is plain cross entropy.
Tensor label_smoothing_loss(Tape* tape, const Tensor& probs, std::span<const int> labels, double alpha);

struct TrainState {
    std::size_t epoch = 0;
    std::size_t iteration = 0;
    double progress = 0.0;  // completed_iterations / total_iterations
    LossReport report;
    std::vector<std::vector<double>> zeta_history;
};

struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    LossReport report;
    std::vector<double> zeta;  // after the iteration's projection
    double lr_encoder = 0.0;
};

struct TransferResult {
    FusedTargetModel model;
    std::vector<IterationRecord> history;
    std::vector<double> final_zeta;
    TiFeatureCache ti_cache;                   // as computed pre-loop
    std::vector<BnStatsSnapshot> snapshots;    // as computed pre-loop
    std::vector<std::string> warnings;
    std::optional<Discriminator> discriminator;  // unpaired variant only
};

using EpochCallback = std::function<void(std::size_t epoch, FusedTargetModel& current)>;

// Supervised source training with label smoothing; populates BN running
// statistics and leaves the classifier trainable (it is frozen at transfer
// time).
SourceModel train_source(const LabeledSet& data, const EncoderSpec& spec, std::size_t num_classes,
                         const TransferConfig& config, std::uint64_t seed);

// Knowledge transfer with paired task-irrelevant data.
TransferResult transfer(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                        const PairedTiDataset& ti, const TransferConfig& config,
                        const EpochCallback& epoch_cb = {});

// Adversarial variant for unpaired task-irrelevant data: per iteration a
// discriminator step, then an encoder+zeta step with the discriminator held
// fixed.
TransferResult transfer_unpaired(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                                 const Tensor& ti_unpaired_source, const Tensor& ti_unpaired_target,
                                 const TransferConfig& config, const EpochCallback& epoch_cb = {});

double evaluate(FusedTargetModel& model, const LabeledSet& heldout);
double evaluate(SourceModel& model, const LabeledSet& heldout);

struct AblationRow {
    std::string arm;  // "ma", "ma+d", "ma+ti", "all"
    bool use_d = false;
    bool use_ti = false;
    double accuracy = 0.0;
};

// Runs the four loss-combination arms with a shared seed.
std::vector<AblationRow> ablate(const std::vector<SourceModel>& sources, const UnlabeledSet& target,
                                const LabeledSet& target_eval, const PairedTiDataset& ti,
                                const TransferConfig& config);

}  // namespace xmodal
