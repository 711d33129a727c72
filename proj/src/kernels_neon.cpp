// NEON kernel variants for aarch64. Baseline Advanced SIMD only; no
// feature probing needed since NEON is mandatory on aarch64.

#include "texstat/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace texstat::kernels {
namespace {

void add_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(c + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(c + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(c + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

void div_f(const float* a, const float* b, float* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(c + i, vdivq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) c[i] = a[i] / b[i];
}

void axpy_f(float s, const float* x, float* y, std::size_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), vs, vld1q_f32(x + i)));
    for (; i < n; ++i) y[i] += s * x[i];
}

void scale_f(float s, const float* x, float* y, std::size_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(vs, vld1q_f32(x + i)));
    for (; i < n; ++i) y[i] = s * x[i];
}

void fma_acc_f(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_f(const float* x, float* y, std::size_t n) {
    const float32x4_t z = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmaxq_f32(vld1q_f32(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

float dot_f(const float* a, const float* b, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    float s = vaddvq_f32(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

float sum_f(const float* x, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
    float s = vaddvq_f32(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void minmax_f(const float* x, std::size_t n, float* lo, float* hi) {
    float mn = __builtin_huge_valf();
    float mx = -__builtin_huge_valf();
    std::size_t i = 0;
    if (n >= 4) {
        float32x4_t vmn = vld1q_f32(x);
        float32x4_t vmx = vmn;
        for (i = 4; i + 4 <= n; i += 4) {
            const float32x4_t v = vld1q_f32(x + i);
            vmn = vminq_f32(vmn, v);
            vmx = vmaxq_f32(vmx, v);
        }
        mn = vminvq_f32(vmn);
        mx = vmaxvq_f32(vmx);
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
        for (std::size_t p = 0; p < k; ++p) axpy_f(arow[p], b + p * n, crow, n);
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

void add_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(c + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(c + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(c + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

void div_d(const double* a, const double* b, double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(c + i, vdivq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] / b[i];
}

void axpy_d(double s, const double* x, double* y, std::size_t n) {
    const float64x2_t vs = vdupq_n_f64(s);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vs, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += s * x[i];
}

void scale_d(double s, const double* x, double* y, std::size_t n) {
    const float64x2_t vs = vdupq_n_f64(s);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vs, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] = s * x[i];
}

void fma_acc_d(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void relu_d(const double* x, double* y, std::size_t n) {
    const float64x2_t z = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmaxq_f64(vld1q_f64(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

double dot_d(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_d(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void minmax_d(const double* x, std::size_t n, double* lo, double* hi) {
    double mn = __builtin_huge_val();
    double mx = -__builtin_huge_val();
    for (std::size_t i = 0; i < n; ++i) {
        mn = mn < x[i] ? mn : x[i];
        mx = mx > x[i] ? mx : x[i];
    }
    *lo = mn;
    *hi = mx;
}

void matmul_nn_d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) axpy_d(a[i * k + p], b + p * n, c + i * n, n);
}

void matmul_nt_d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_d(a + i * k, b + j * k, k);
}

void matmul_tn_d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) axpy_d(a[i * k + p], b + i * n, c + p * n, n);
}

const Table<float> kFloatTable = {
    add_f, sub_f, mul_f, div_f, axpy_f, scale_f, fma_acc_f, relu_f,
    dot_f, sum_f, minmax_f, matmul_nn_f, matmul_nt_f, matmul_tn_f, "neon",
};

const Table<double> kDoubleTable = {
    add_d, sub_d, mul_d, div_d, axpy_d, scale_d, fma_acc_d, relu_d,
    dot_d, sum_d, minmax_d, matmul_nn_d, matmul_nt_d, matmul_tn_d, "neon",
};

}  // namespace

template <>
const Table<float>* neon_table<float>() {
    return &kFloatTable;
}

template <>
const Table<double>* neon_table<double>() {
    return &kDoubleTable;
}

}  // namespace texstat::kernels

#else

namespace texstat::kernels {

template <>
const Table<float>* neon_table<float>() {
    return nullptr;
}

template <>
const Table<double>* neon_table<double>() {
    return nullptr;
}

}  // namespace texstat::kernels

#endif
