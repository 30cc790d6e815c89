#include "xmodal/run_manifest.hpp"

#include <ctime>
#include <sstream>

#include "xmodal/util.hpp"

namespace xmodal {

std::string now_iso8601() {
    const std::time_t t = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_run_manifest(const RunManifest& manifest, const std::string& path) {
    std::ostringstream os;
    os << "command = " << manifest.command << "\n";
    os << "seed = " << manifest.seed << "\n";
    os << "started_at = " << manifest.started_at << "\n";
    os << "finished_at = " << manifest.finished_at << "\n";
    for (const auto& [input, hash] : manifest.input_hashes) os << "input." << input << " = " << hash << "\n";
    for (const auto& out : manifest.output_paths) os << "output = " << out << "\n";
    os << "config_begin\n" << manifest.config_snapshot << "config_end\n";
    write_file_bytes(path, os.str());
}

}  // namespace xmodal
