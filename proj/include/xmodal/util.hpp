#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a64_str(const std::string& s, std::uint64_t h = 1469598103934665603ull);
std::string to_hex(std::uint64_t v);

// Shortest round-trip decimal text for a double ("%.17g" fallback trimmed),
// deterministic across runs.
std::string format_double(double v);

std::string join_ints(const std::vector<int>& v);
std::string join_sizes(const std::vector<std::size_t>& v);
std::vector<int> parse_int_list(const std::string& s);
std::vector<std::size_t> parse_size_list(const std::string& s);

bool parse_bool(const std::string& s, const std::string& context);
double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);
std::string file_hash_hex(const std::string& path);

}  // namespace xmodal
