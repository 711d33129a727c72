#include "texstat/common.hpp"

#include <algorithm>
#include <cstring>

namespace texstat {

std::size_t worker_count() {
    static const std::size_t cached = [] {
        std::size_t n = std::thread::hardware_concurrency();
        if (n == 0) n = 1;
        if (const char* env = std::getenv("TEXSTAT_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end != env && v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
        }
        return std::min<std::size_t>(n, 64);
    }();
    return cached;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const std::size_t workers = worker_count();
    if (n <= 0) return;
    if (workers <= 1 || n < 256) {
        fn(0, n);
        return;
    }
    const std::int64_t chunks = std::min<std::int64_t>(static_cast<std::int64_t>(workers), n);
    const std::int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(chunks) - 1);
    for (std::int64_t c = 1; c < chunks; ++c) {
        const std::int64_t b = c * per;
        const std::int64_t e = std::min(n, b + per);
        if (b >= e) break;
        threads.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, std::min(n, per));
    for (auto& t : threads) t.join();
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + " is not key=value: '" + line +
                              "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key on line " + std::to_string(line_no));
        if (!out.emplace(key, value).second)
            throw ConfigError("duplicate key '" + key + "' on line " + std::to_string(line_no));
    }
    return out;
}

bool take_kv_bool(std::map<std::string, std::string>& kv, const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string v = it->second;
    kv.erase(it);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

std::int64_t take_kv_int(std::map<std::string, std::string>& kv, const std::string& key,
                         std::int64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string v = it->second;
    kv.erase(it);
    try {
        std::size_t used = 0;
        const long long parsed = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double take_kv_double(std::map<std::string, std::string>& kv, const std::string& key,
                      double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string v = it->second;
    kv.erase(it);
    try {
        std::size_t used = 0;
        const double parsed = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::string take_kv_string(std::map<std::string, std::string>& kv, const std::string& key,
                           const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::string v = it->second;
    kv.erase(it);
    return v;
}

}  // namespace texstat
