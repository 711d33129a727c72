#pragma once

#include <cstddef>
#include <string>

namespace texstat::kernels {

// Dense inner-loop kernels behind every tensor operation. Each entry has a
// scalar reference implementation plus SIMD variants (AVX2 on x86-64, NEON
// on aarch64); the active table is chosen once at startup from CPU features
// and can be forced with TEXSTAT_KERNELS=scalar|avx2|neon|auto or
// force_backend(). SIMD results may differ from scalar in the last bits
// (FMA contraction, reassociated reductions); the equivalence tests pin the
// allowed drift.
template <typename T>
struct Table {
    // c[i] = a[i] op b[i]
    void (*add)(const T* a, const T* b, T* c, std::size_t n);
    void (*sub)(const T* a, const T* b, T* c, std::size_t n);
    void (*mul)(const T* a, const T* b, T* c, std::size_t n);
    void (*div)(const T* a, const T* b, T* c, std::size_t n);
    // y[i] += s * x[i]
    void (*axpy)(T s, const T* x, T* y, std::size_t n);
    // y[i] = s * x[i]
    void (*scale)(T s, const T* x, T* y, std::size_t n);
    // y[i] += a[i] * b[i]
    void (*fma_acc)(const T* a, const T* b, T* y, std::size_t n);
    // y[i] = max(x[i], 0)
    void (*relu)(const T* x, T* y, std::size_t n);
    T (*dot)(const T* a, const T* b, std::size_t n);
    T (*sum)(const T* x, std::size_t n);
    void (*minmax)(const T* x, std::size_t n, T* lo, T* hi);
    // Row-major matrix products, all accumulating into C.
    // nn: C[MxN] += A[MxK] * B[KxN]
    // nt: C[MxN] += A[MxK] * B[NxK]^T
    // tn: C[KxN] += A[MxK]^T * B[MxN]
    void (*matmul_nn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
    void (*matmul_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
    void (*matmul_tn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
    const char* name;
};

template <typename T>
const Table<T>& scalar_table();

// Null when the build or the CPU does not support the instruction set.
template <typename T>
const Table<T>* avx2_table();
template <typename T>
const Table<T>* neon_table();

// Runtime-selected table. Resolution order: forced backend (env or call),
// then best supported SIMD, then scalar.
template <typename T>
const Table<T>& active();

std::string active_name();
bool cpu_has_avx2();

// "scalar", "avx2", "neon" or "auto". Throws ConfigError for unknown names
// or unsupported backends.
void force_backend(const std::string& name);

}  // namespace texstat::kernels
