#include "texstat/kernels.hpp"

#include <atomic>
#include <cstdlib>

#include "texstat/common.hpp"

namespace texstat::kernels {
namespace {

enum class Backend { kAuto, kScalar, kAvx2, kNeon };

std::atomic<Backend> g_forced{Backend::kAuto};

Backend parse_backend(const std::string& name) {
    if (name == "auto") return Backend::kAuto;
    if (name == "scalar") return Backend::kScalar;
    if (name == "avx2") return Backend::kAvx2;
    if (name == "neon") return Backend::kNeon;
    throw ConfigError("unknown kernel backend '" + name + "' (expected scalar|avx2|neon|auto)");
}

Backend env_backend() {
    static const Backend b = [] {
        if (const char* env = std::getenv("TEXSTAT_KERNELS")) return parse_backend(env);
        return Backend::kAuto;
    }();
    return b;
}

template <typename T>
const Table<T>& resolve() {
    Backend want = g_forced.load(std::memory_order_relaxed);
    if (want == Backend::kAuto) want = env_backend();
    switch (want) {
        case Backend::kScalar:
            return scalar_table<T>();
        case Backend::kAvx2: {
            const Table<T>* t = avx2_table<T>();
            if (!t || !cpu_has_avx2()) throw ConfigError("avx2 kernels unavailable on this CPU/build");
            return *t;
        }
        case Backend::kNeon: {
            const Table<T>* t = neon_table<T>();
            if (!t) throw ConfigError("neon kernels unavailable in this build");
            return *t;
        }
        case Backend::kAuto:
            break;
    }
    if (const Table<T>* t = neon_table<T>()) return *t;
    if (const Table<T>* t = avx2_table<T>(); t && cpu_has_avx2()) return *t;
    return scalar_table<T>();
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    static const bool has = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return has;
#else
    return false;
#endif
}

void force_backend(const std::string& name) {
    Backend b = parse_backend(name);
    if (b == Backend::kAvx2 && (!avx2_table<float>() || !cpu_has_avx2()))
        throw ConfigError("avx2 kernels unavailable on this CPU/build");
    if (b == Backend::kNeon && !neon_table<float>())
        throw ConfigError("neon kernels unavailable in this build");
    g_forced.store(b, std::memory_order_relaxed);
}

template <>
const Table<float>& active<float>() {
    return resolve<float>();
}

template <>
const Table<double>& active<double>() {
    return resolve<double>();
}

std::string active_name() {
    return active<float>().name;
}

}  // namespace texstat::kernels
