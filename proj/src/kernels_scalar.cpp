#include "texstat/kernels.hpp"

#include <algorithm>
#include <limits>

// Reference kernels. Plain loops, no reassociation tricks: these define the
// semantics the SIMD variants are tested against.

namespace texstat::kernels {
namespace {

template <typename T>
void add_k(const T* a, const T* b, T* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

template <typename T>
void sub_k(const T* a, const T* b, T* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}

template <typename T>
void mul_k(const T* a, const T* b, T* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

template <typename T>
void div_k(const T* a, const T* b, T* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] / b[i];
}

template <typename T>
void axpy_k(T s, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

template <typename T>
void scale_k(T s, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
}

template <typename T>
void fma_acc_k(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
void relu_k(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
T dot_k(const T* a, const T* b, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T sum_k(const T* x, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
void minmax_k(const T* x, std::size_t n, T* lo, T* hi) {
    T mn = std::numeric_limits<T>::infinity();
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        mn = std::min(mn, x[i]);
        mx = std::max(mx, x[i]);
    }
    *lo = mn;
    *hi = mx;
}

template <typename T>
void matmul_nn_k(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

template <typename T>
void matmul_nt_k(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

template <typename T>
void matmul_tn_k(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

template <typename T>
Table<T> make_table() {
    Table<T> t;
    t.add = add_k<T>;
    t.sub = sub_k<T>;
    t.mul = mul_k<T>;
    t.div = div_k<T>;
    t.axpy = axpy_k<T>;
    t.scale = scale_k<T>;
    t.fma_acc = fma_acc_k<T>;
    t.relu = relu_k<T>;
    t.dot = dot_k<T>;
    t.sum = sum_k<T>;
    t.minmax = minmax_k<T>;
    t.matmul_nn = matmul_nn_k<T>;
    t.matmul_nt = matmul_nt_k<T>;
    t.matmul_tn = matmul_tn_k<T>;
    t.name = "scalar";
    return t;
}

}  // namespace

template <>
const Table<float>& scalar_table<float>() {
    static const Table<float> t = make_table<float>();
    return t;
}

template <>
const Table<double>& scalar_table<double>() {
    static const Table<double> t = make_table<double>();
    return t;
}

}  // namespace texstat::kernels
