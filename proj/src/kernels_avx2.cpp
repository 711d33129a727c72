// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be reached through the dispatch table after a
// CPU feature check.

#include "texstat/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

namespace texstat::kernels {
namespace {

// ---- float, 8 lanes ----

inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

inline double hsum256d(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_hadd_pd(lo, lo);
    return _mm_cvtsd_f64(lo);
}

void add_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(c + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(c + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(c + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

void div_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(c + i, _mm256_div_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) c[i] = a[i] / b[i];
}

void axpy_f(float s, const float* x, float* y, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(vs, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += s * x[i];
}

void scale_f(float s, const float* x, float* y, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_mul_ps(vs, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = s * x[i];
}

void fma_acc_f(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(
            y + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_f(const float* x, float* y, std::size_t n) {
    const __m256 z = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

float dot_f(const float* a, const float* b, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float acc = hsum256(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float sum_f(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void minmax_f(const float* x, std::size_t n, float* lo, float* hi) {
    float mn = __builtin_huge_valf();
    float mx = -__builtin_huge_valf();
    std::size_t i = 0;
    if (n >= 8) {
        __m256 vmn = _mm256_loadu_ps(x);
        __m256 vmx = vmn;
        for (i = 8; i + 8 <= n; i += 8) {
            const __m256 v = _mm256_loadu_ps(x + i);
            vmn = _mm256_min_ps(vmn, v);
            vmx = _mm256_max_ps(vmx, v);
        }
        alignas(32) float tmp[8];
        _mm256_store_ps(tmp, vmn);
        for (float t : tmp) mn = mn < t ? mn : t;
        _mm256_store_ps(tmp, vmx);
        for (float t : tmp) mx = mx > t ? mx : t;
    }
    for (; i < n; ++i) {
        mn = mn < x[i] ? mn : x[i];
        mx = mx > x[i] ? mx : x[i];
    }
    *lo = mn;
    *hi = mx;
}

void matmul_nn_f(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        std::size_t p = 0;
        // Two rank-1 updates per pass keeps the FMA pipes busier.
        for (; p + 2 <= k; p += 2) {
            const __m256 s0 = _mm256_set1_ps(arow[p]);
            const __m256 s1 = _mm256_set1_ps(arow[p + 1]);
            const float* b0 = b + p * n;
            const float* b1 = b0 + n;
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 acc = _mm256_loadu_ps(crow + j);
                acc = _mm256_fmadd_ps(s0, _mm256_loadu_ps(b0 + j), acc);
                acc = _mm256_fmadd_ps(s1, _mm256_loadu_ps(b1 + j), acc);
                _mm256_storeu_ps(crow + j, acc);
            }
            for (; j < n; ++j) crow[j] += arow[p] * b0[j] + arow[p + 1] * b1[j];
        }
        for (; p < k; ++p) axpy_f(arow[p], b + p * n, crow, n);
    }
}

void matmul_nt_f(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot_f(arow, b + j * k, k);
    }
}

void matmul_tn_f(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        const float* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) axpy_f(arow[p], brow, c + p * n, n);
    }
}

// ---- double, 4 lanes ----

void add_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

void div_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] / b[i];
}

void axpy_d(double s, const double* x, double* y, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vs, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += s * x[i];
}

void scale_d(double s, const double* x, double* y, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(vs, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = s * x[i];
}

void fma_acc_d(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(
            y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_d(const double* x, double* y, std::size_t n) {
    const __m256d z = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

double dot_d(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum256d(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_d(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum256d(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void minmax_d(const double* x, std::size_t n, double* lo, double* hi) {
    double mn = __builtin_huge_val();
    double mx = -__builtin_huge_val();
    std::size_t i = 0;
    if (n >= 4) {
        __m256d vmn = _mm256_loadu_pd(x);
        __m256d vmx = vmn;
        for (i = 4; i + 4 <= n; i += 4) {
            const __m256d v = _mm256_loadu_pd(x + i);
            vmn = _mm256_min_pd(vmn, v);
            vmx = _mm256_max_pd(vmx, v);
        }
        alignas(32) double tmp[4];
        _mm256_store_pd(tmp, vmn);
        for (double t : tmp) mn = mn < t ? mn : t;
        _mm256_store_pd(tmp, vmx);
        for (double t : tmp) mx = mx > t ? mx : t;
    }
    for (; i < n; ++i) {
        mn = mn < x[i] ? mn : x[i];
        mx = mx > x[i] ? mx : x[i];
    }
    *lo = mn;
    *hi = mx;
}

void matmul_nn_d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) axpy_d(arow[p], b + p * n, crow, n);
    }
}

void matmul_nt_d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot_d(arow, b + j * k, k);
    }
}

void matmul_tn_d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) axpy_d(arow[p], brow, c + p * n, n);
    }
}

const Table<float> kFloatTable = {
    add_f, sub_f, mul_f, div_f, axpy_f, scale_f, fma_acc_f, relu_f,
    dot_f, sum_f, minmax_f, matmul_nn_f, matmul_nt_f, matmul_tn_f, "avx2",
};

const Table<double> kDoubleTable = {
    add_d, sub_d, mul_d, div_d, axpy_d, scale_d, fma_acc_d, relu_d,
    dot_d, sum_d, minmax_d, matmul_nn_d, matmul_nt_d, matmul_tn_d, "avx2",
};

}  // namespace

template <>
const Table<float>* avx2_table<float>() {
    return &kFloatTable;
}

template <>
const Table<double>* avx2_table<double>() {
    return &kDoubleTable;
}

}  // namespace texstat::kernels

#else

namespace texstat::kernels {

template <>
const Table<float>* avx2_table<float>() {
    return nullptr;
}

template <>
const Table<double>* avx2_table<double>() {
    return nullptr;
}

}  // namespace texstat::kernels

#endif
