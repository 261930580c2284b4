#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace skillrec {

using json = nlohmann::json;

// 64-bit FNV-1a. Stable across platforms; used for fingerprints and
// content hashes, never for security.
class Fnv1a {
public:
    void update(std::string_view bytes);
    void update_u64(std::uint64_t v);
    std::uint64_t digest() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 14695981039346656037ULL;
};

std::uint64_t fnv1a(std::string_view bytes);
std::string to_hex(std::uint64_t v);

std::uint64_t splitmix64(std::uint64_t x);

// Unbiased draw in [0, bound) from a 64-bit generator (Lemire's method).
template <typename Rng>
std::uint64_t bounded(Rng& rng, std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> whitespace_tokens(std::string_view s);
std::size_t whitespace_token_count(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Reads a JSONL file; each non-blank line must be a JSON value.
// Errors carry the 1-based line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

// Stable textual dump used for every persisted document.
std::string dump_pretty(const json& j);

}  // namespace skillrec
