#pragma once

#include <string>
#include <utility>
#include <vector>

namespace xmodal {

// Provenance record for one CLI run; written as run_manifest.txt in the
// output directory. Timestamps make manifests run-specific; the data
// outputs themselves stay bitwise reproducible.
struct RunManifest {
    std::string command;
    std::string config_snapshot;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> input_hashes;  // path -> hash
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> output_paths;
};

std::string now_iso8601();
void write_run_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace xmodal
