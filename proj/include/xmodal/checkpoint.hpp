#pragma once

#include <string>
#include <vector>

#include "xmodal/model.hpp"

namespace xmodal {

// Checkpoint container: either a single source model or a fused model with
// mixing weights. Format (all little-endian):
//   "SCKT" | u32 version | u64 config_hash | u8 kind | u32 num_models |
//   arch header | per-model length-prefixed f64 parameter blocks |
//   zeta block (fused only) | u32 CRC32 of all preceding bytes.
struct Checkpoint {
    enum class Kind { kSource = 0, kFused = 1 };
    Kind kind = Kind::kSource;
    std::vector<SourceModel> models;
    std::vector<double> zeta;  // empty for kSource

    SourceModel& single();
    FusedTargetModel fused() const;
};

std::uint64_t arch_config_hash(const EncoderSpec& spec, std::size_t num_classes);

void save_checkpoint(const SourceModel& model, const std::string& path);
void save_checkpoint(const FusedTargetModel& fused, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace xmodal
