#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace texstat {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: usage 1, data 2, numerical 3.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Worker count for data-parallel loops. TEXSTAT_THREADS caps it; 0/unset
// means hardware concurrency.
std::size_t worker_count();

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
// worker. Each index is handled by exactly one chunk, so results are
// bitwise independent of the thread count as long as fn writes only to
// locations derived from its own indices.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

// Parses "key = value" lines. '#' starts a comment; blank lines are
// skipped; duplicate keys raise ConfigError.
std::map<std::string, std::string> parse_kv_text(const std::string& text);

// Typed lookups that consume the key from the map when present.
bool take_kv_bool(std::map<std::string, std::string>& kv, const std::string& key, bool fallback);
std::int64_t take_kv_int(std::map<std::string, std::string>& kv, const std::string& key,
                         std::int64_t fallback);
double take_kv_double(std::map<std::string, std::string>& kv, const std::string& key,
                      double fallback);
std::string take_kv_string(std::map<std::string, std::string>& kv, const std::string& key,
                           const std::string& fallback);

}  // namespace texstat
