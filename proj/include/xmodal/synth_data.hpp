#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

struct SynthSpec {
    std::size_t num_tr_classes = 6;
    std::size_t num_ti_classes = 6;
    std::size_t latent_dim = 8;
    std::size_t input_dim = 64;
    std::size_t samples_per_class = 40;
    std::size_t num_domains = 2;
    double domain_shift_scale = 0.15;
    double modality_gap_scale = 0.6;
    double modality_noise_scale = 0.02;
    double latent_noise_scale = 0.5;
    std::uint64_t seed = 7;

    bool operator==(const SynthSpec&) const = default;
};

struct LabeledSet {
    Tensor x;            // [n x input_dim]
    std::vector<int> y;  // class indices in [0, num_tr_classes)
};

struct UnlabeledSet {
    Tensor x;
};

// Sample-aligned cross-modal pairs from the task-irrelevant classes.
struct PairedTiDataset {
    Tensor source_x;
    Tensor target_x;
    std::vector<int> latent_ids;  // shared latent identity per pair
    std::vector<int> class_ids;   // TI class index per pair (bookkeeping only)

    std::size_t size() const { return latent_ids.size(); }
};

struct CorpusManifest {
    SynthSpec spec;
    std::vector<int> tr_class_ids;
    std::vector<int> ti_class_ids;
    std::vector<int> ti_latent_ids;
    // file name -> content hash, filled at save time
    std::vector<std::pair<std::string, std::string>> file_hashes;
};

struct GeneratedCorpus {
    std::vector<LabeledSet> source_train;  // per domain, source modality
    std::vector<LabeledSet> source_eval;   // per domain, source modality
    UnlabeledSet target_unlabeled;         // target modality, labels withheld
    LabeledSet target_eval;                // same samples with labels, evaluation only
    PairedTiDataset ti;
    CorpusManifest manifest;
};

// Disjoint, deterministic class split: the first tr_count shuffled ids are
// task-relevant, the rest task-irrelevant.
std::pair<std::vector<int>, std::vector<int>> split_tr_ti(std::size_t num_classes, std::size_t tr_count,
                                                          std::uint64_t seed);

GeneratedCorpus generate(const SynthSpec& spec);

// Corpus directory layout: corpus_manifest.txt + per-split binary arrays
// (u32 ndim, u32 dims..., f32 little-endian row-major) + label text files
// (one integer per line).
void save_corpus(const GeneratedCorpus& corpus, const std::string& dir);
GeneratedCorpus load_corpus(const std::string& dir);

}  // namespace xmodal
