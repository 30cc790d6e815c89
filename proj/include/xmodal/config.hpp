#pragma once

#include <string>

#include "xmodal/model.hpp"
#include "xmodal/synth_data.hpp"
#include "xmodal/transfer.hpp"

namespace xmodal {

struct AppConfig {
    EncoderSpec model;
    SynthSpec synth;
    TransferConfig transfer;

    bool operator==(const AppConfig&) const = default;
};

AppConfig default_config();

// Flat `key = value` text with [model], [synth] and [transfer] sections.
// Unknown sections or keys are rejected by name; parse(serialize(c)) == c.
AppConfig parse_config_text(const std::string& text);
AppConfig parse_config_file(const std::string& path);
std::string serialize_config(const AppConfig& config);

}  // namespace xmodal
