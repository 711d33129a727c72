#include "texstat/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

#include "texstat/kernels.hpp"

namespace texstat {

namespace {

std::atomic<bool> g_strict_division{true};

template <typename T>
Tape<T>* tape_for(bool any_input_grad) {
    Tape<T>* t = active_tape<T>();
    return any_input_grad ? t : nullptr;
}

template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* where) {
#ifndef NDEBUG
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(t.data()[i])))
            throw NumericError(std::string(where) + " produced a non-finite value at flat index " +
                               std::to_string(i));
    }
#else
    (void)t;
    (void)where;
#endif
}

// Trailing-dimension broadcast: shapes are right-aligned, each axis pair must
// match or one of them be 1. sa/sb hold per-output-axis strides into a and b,
// 0 on broadcast axes.
struct BcPlan {
    Shape out;
    std::vector<std::int64_t> sa;
    std::vector<std::int64_t> sb;
    std::int64_t numel = 1;
};

BcPlan make_bc_plan(const Shape& a, const Shape& b, const char* op) {
    const std::size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    BcPlan p;
    p.out.assign(r, 1);
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    std::int64_t st_a = 1, st_b = 1;
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < ra ? a[ra - 1 - i] : 1;
        const std::int64_t db = i < rb ? b[rb - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        const std::size_t oi = r - 1 - i;
        p.out[oi] = std::max(da, db);
        p.sa[oi] = (da == p.out[oi]) ? st_a : 0;
        p.sb[oi] = (db == p.out[oi]) ? st_b : 0;
        st_a *= da;
        st_b *= db;
    }
    p.numel = shape_numel(p.out);
    return p;
}

// Calls f(out_flat, a_flat, b_flat) for every output element in row-major
// order, tracking both input offsets incrementally.
template <typename F>
void bc_for_each(const BcPlan& p, F&& f) {
    const std::size_t r = p.out.size();
    if (r == 0) {
        f(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
        return;
    }
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ao = 0, bo = 0;
    for (std::int64_t o = 0; o < p.numel; ++o) {
        f(o, ao, bo);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ao += p.sa[d];
            bo += p.sb[d];
            if (idx[d] < p.out[d]) break;
            ao -= p.sa[d] * p.out[d];
            bo -= p.sb[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

// Row-chunked parallel matrix products. tn writes every C row from each A
// row, so it stays serial.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    const auto& kt = kernels::active<T>();
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
        kt.matmul_nn(a + i0 * k, b, c + i0 * n, static_cast<std::size_t>(i1 - i0),
                     static_cast<std::size_t>(k), static_cast<std::size_t>(n));
    });
}

template <typename T>
void mm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    const auto& kt = kernels::active<T>();
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
        kt.matmul_nt(a + i0 * k, b, c + i0 * n, static_cast<std::size_t>(i1 - i0),
                     static_cast<std::size_t>(k), static_cast<std::size_t>(n));
    });
}

template <typename T>
void mm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    kernels::active<T>().matmul_tn(a, b, c, static_cast<std::size_t>(m),
                                   static_cast<std::size_t>(k), static_cast<std::size_t>(n));
}

void check_rank3(const Shape& s, const char* op) {
    if (s.size() != 3)
        throw ShapeError(std::string(op) + " expects a channels x height x width tensor, got " +
                         shape_str(s));
}

struct AxisSplit {
    std::int64_t outer = 1, mid = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::int64_t axis, const char* op) {
    if (axis < 0 || axis >= static_cast<std::int64_t>(s.size()))
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
    AxisSplit sp;
    for (std::int64_t i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
    sp.mid = s[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

void set_strict_division(bool on) { g_strict_division.store(on); }
bool strict_division() { return g_strict_division.load(); }

// ---------------------------------------------------------------------------
// Elementwise binary
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape() == b.shape();
    Tensor<T> out;
    BcPlan plan;
    if (same) {
        out = Tensor<T>::zeros(a.shape());
        kernels::active<T>().add(a.data(), b.data(), out.data(),
                                 static_cast<std::size_t>(out.numel()));
    } else {
        plan = make_bc_plan(a.shape(), b.shape(), "add");
        out = Tensor<T>::zeros(plan.out);
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
            po[o] = pa[ao] + pb[bo];
        });
    }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, b = b, out, same, plan]() mutable {
            const T* g = out.grad().data();
            const std::size_t n = static_cast<std::size_t>(out.numel());
            if (same) {
                const auto& kt = kernels::active<T>();
                if (a.requires_grad()) kt.axpy(T(1), g, a.grad().data(), n);
                if (b.requires_grad()) kt.axpy(T(1), g, b.grad().data(), n);
                return;
            }
            T* ga = a.requires_grad() ? a.grad().data() : nullptr;
            T* gb = b.requires_grad() ? b.grad().data() : nullptr;
            bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
                if (ga) ga[ao] += g[o];
                if (gb) gb[bo] += g[o];
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape() == b.shape();
    Tensor<T> out;
    BcPlan plan;
    if (same) {
        out = Tensor<T>::zeros(a.shape());
        kernels::active<T>().sub(a.data(), b.data(), out.data(),
                                 static_cast<std::size_t>(out.numel()));
    } else {
        plan = make_bc_plan(a.shape(), b.shape(), "sub");
        out = Tensor<T>::zeros(plan.out);
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
            po[o] = pa[ao] - pb[bo];
        });
    }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, b = b, out, same, plan]() mutable {
            const T* g = out.grad().data();
            const std::size_t n = static_cast<std::size_t>(out.numel());
            if (same) {
                const auto& kt = kernels::active<T>();
                if (a.requires_grad()) kt.axpy(T(1), g, a.grad().data(), n);
                if (b.requires_grad()) kt.axpy(T(-1), g, b.grad().data(), n);
                return;
            }
            T* ga = a.requires_grad() ? a.grad().data() : nullptr;
            T* gb = b.requires_grad() ? b.grad().data() : nullptr;
            bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
                if (ga) ga[ao] += g[o];
                if (gb) gb[bo] -= g[o];
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape() == b.shape();
    Tensor<T> out;
    BcPlan plan;
    if (same) {
        out = Tensor<T>::zeros(a.shape());
        kernels::active<T>().mul(a.data(), b.data(), out.data(),
                                 static_cast<std::size_t>(out.numel()));
    } else {
        plan = make_bc_plan(a.shape(), b.shape(), "mul");
        out = Tensor<T>::zeros(plan.out);
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
            po[o] = pa[ao] * pb[bo];
        });
    }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, b = b, out, same, plan]() mutable {
            const T* g = out.grad().data();
            const std::size_t n = static_cast<std::size_t>(out.numel());
            if (same) {
                const auto& kt = kernels::active<T>();
                if (a.requires_grad()) kt.fma_acc(g, b.data(), a.grad().data(), n);
                if (b.requires_grad()) kt.fma_acc(g, a.data(), b.grad().data(), n);
                return;
            }
            const T* pa = a.data();
            const T* pb = b.data();
            T* ga = a.requires_grad() ? a.grad().data() : nullptr;
            T* gb = b.requires_grad() ? b.grad().data() : nullptr;
            bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
                if (ga) ga[ao] += g[o] * pb[bo];
                if (gb) gb[bo] += g[o] * pa[ao];
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
    if (strict_division()) {
        const T* pb = b.data();
        for (std::int64_t i = 0; i < b.numel(); ++i) {
            if (std::fabs(static_cast<double>(pb[i])) < 1e-12)
                throw NumericError("divide: denominator magnitude below 1e-12 at flat index " +
                                   std::to_string(i));
        }
    }
    const bool same = a.shape() == b.shape();
    Tensor<T> out;
    BcPlan plan;
    if (same) {
        out = Tensor<T>::zeros(a.shape());
        kernels::active<T>().div(a.data(), b.data(), out.data(),
                                 static_cast<std::size_t>(out.numel()));
    } else {
        plan = make_bc_plan(a.shape(), b.shape(), "divide");
        out = Tensor<T>::zeros(plan.out);
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
            po[o] = pa[ao] / pb[bo];
        });
    }
    debug_check_finite(out, "divide");
    if (Tape<T>* tape = tape_for<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, b = b, out, same, plan]() mutable {
            const T* g = out.grad().data();
            const T* po = out.data();
            const T* pb = b.data();
            T* ga = a.requires_grad() ? a.grad().data() : nullptr;
            T* gb = b.requires_grad() ? b.grad().data() : nullptr;
            if (same) {
                for (std::int64_t i = 0; i < out.numel(); ++i) {
                    const T gi = g[i];
                    if (ga) ga[i] += gi / pb[i];
                    if (gb) gb[i] -= gi * po[i] / pb[i];
                }
                return;
            }
            bc_for_each(plan, [&](std::int64_t o, std::int64_t ao, std::int64_t bo) {
                if (ga) ga[ao] += g[o] / pb[bo];
                if (gb) gb[bo] -= g[o] * po[o] / pb[bo];
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scalar and unary
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out]() mutable {
            kernels::active<T>().axpy(T(1), out.grad().data(), a.grad().data(),
                                      static_cast<std::size_t>(a.numel()));
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    kernels::active<T>().scale(c, a.data(), out.data(), static_cast<std::size_t>(a.numel()));
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, c]() mutable {
            kernels::active<T>().axpy(c, out.grad().data(), a.grad().data(),
                                      static_cast<std::size_t>(a.numel()));
        });
    }
    return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = std::exp(pa[i]);
    debug_check_finite(out, "exp");
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out]() mutable {
            kernels::active<T>().fma_acc(out.grad().data(), out.data(), a.grad().data(),
                                         static_cast<std::size_t>(a.numel()));
        });
    }
    return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = std::fabs(pa[i]);
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        // Subgradient 0 at the kink.
        tape->record([a = a, out]() mutable {
            const T* g = out.grad().data();
            const T* pa = a.data();
            T* ga = a.grad().data();
            for (std::int64_t i = 0; i < a.numel(); ++i) {
                if (pa[i] > T(0))
                    ga[i] += g[i];
                else if (pa[i] < T(0))
                    ga[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const T x = pa[i];
        if (x >= T(0)) {
            const T e = std::exp(-x);
            po[i] = T(1) / (T(1) + e);
        } else {
            const T e = std::exp(x);
            po[i] = e / (T(1) + e);
        }
    }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out]() mutable {
            const T* g = out.grad().data();
            const T* po = out.data();
            T* ga = a.grad().data();
            for (std::int64_t i = 0; i < a.numel(); ++i)
                ga[i] += g[i] * po[i] * (T(1) - po[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    kernels::active<T>().relu(a.data(), out.data(), static_cast<std::size_t>(a.numel()));
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        // Subgradient 0 at 0.
        tape->record([a = a, out]() mutable {
            const T* g = out.grad().data();
            const T* pa = a.data();
            T* ga = a.grad().data();
            for (std::int64_t i = 0; i < a.numel(); ++i)
                if (pa[i] > T(0)) ga[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    mm_nn(a.data(), b.data(), out.data(), m, k, n);
    debug_check_finite(out, "matmul");
    if (Tape<T>* tape = tape_for<T>(a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, b = b, out, m, k, n]() mutable {
            const T* g = out.grad().data();
            // dA += G * B^T, dB += A^T * G
            if (a.requires_grad()) mm_nt(g, b.data(), a.grad().data(), m, n, k);
            if (b.requires_grad()) mm_tn(a.data(), g, b.grad().data(), m, k, n);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose expects a rank-2 tensor, got " +
                                        shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, m});
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, m, n]() mutable {
            const T* g = out.grad().data();
            T* ga = a.grad().data();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::int64_t axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t mid = sp.mid, inner = sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * mid * inner + in;
            T mx = pa[base];
            for (std::int64_t m = 1; m < mid; ++m)
                mx = std::max(mx, pa[base + m * inner]);
            T s = T(0);
            for (std::int64_t m = 0; m < mid; ++m) {
                const T e = std::exp(pa[base + m * inner] - mx);
                po[base + m * inner] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (std::int64_t m = 0; m < mid; ++m) po[base + m * inner] *= inv;
        }
    }
    debug_check_finite(out, "softmax");
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, sp]() mutable {
            const T* g = out.grad().data();
            const T* po = out.data();
            T* ga = a.grad().data();
            const std::int64_t mid = sp.mid, inner = sp.inner;
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * mid * inner + in;
                    T dot = T(0);
                    for (std::int64_t m = 0; m < mid; ++m)
                        dot += g[base + m * inner] * po[base + m * inner];
                    for (std::int64_t m = 0; m < mid; ++m) {
                        const std::int64_t at = base + m * inner;
                        ga[at] += po[at] * (g[at] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    std::int64_t c_in, h, w, c_out, k, oh, ow, ckk, ncols;
};

ConvDims conv_dims(const Shape& xs, const Shape& ks, int stride, int padding, int dilation) {
    if (xs.size() != 3) throw ShapeError("conv2d input must be rank 3, got " + shape_str(xs));
    if (ks.size() != 4 || ks[2] != ks[3])
        throw ShapeError("conv2d kernels must be [out x in x k x k], got " + shape_str(ks));
    if (xs[0] != ks[1])
        throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) + " vs kernels " +
                         shape_str(ks));
    if (stride < 1 || padding < 0 || dilation < 1)
        throw ConfigError("conv2d: stride/dilation must be >= 1 and padding >= 0");
    ConvDims d;
    d.c_in = xs[0];
    d.h = xs[1];
    d.w = xs[2];
    d.c_out = ks[0];
    d.k = ks[2];
    const std::int64_t ek = static_cast<std::int64_t>(dilation) * (d.k - 1) + 1;
    const std::int64_t nh = d.h + 2 * padding - ek;
    const std::int64_t nw = d.w + 2 * padding - ek;
    if (nh < 0 || nw < 0 || nh % stride != 0 || nw % stride != 0)
        throw ShapeError("conv2d: stride " + std::to_string(stride) +
                         " does not evenly tile input " + shape_str(xs) + " with kernel " +
                         std::to_string(d.k) + ", padding " + std::to_string(padding) +
                         ", dilation " + std::to_string(dilation));
    d.oh = nh / stride + 1;
    d.ow = nw / stride + 1;
    d.ckk = d.c_in * d.k * d.k;
    d.ncols = d.oh * d.ow;
    return d;
}

// Patch matrix: row (c, ky, kx), column (oy, ox). Out-of-bounds taps are 0.
template <typename T>
void im2col(const T* x, const ConvDims& d, int stride, int padding, int dilation, T* cols) {
    parallel_for(d.ckk, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const std::int64_t c = r / (d.k * d.k);
            const std::int64_t ky = (r / d.k) % d.k;
            const std::int64_t kx = r % d.k;
            T* row = cols + r * d.ncols;
            const T* plane = x + c * d.h * d.w;
            for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                const std::int64_t iy = oy * stride - padding + ky * dilation;
                if (iy < 0 || iy >= d.h) {
                    std::fill(row + oy * d.ow, row + (oy + 1) * d.ow, T(0));
                    continue;
                }
                for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                    const std::int64_t ix = ox * stride - padding + kx * dilation;
                    row[oy * d.ow + ox] =
                        (ix >= 0 && ix < d.w) ? plane[iy * d.w + ix] : T(0);
                }
            }
        }
    });
}

template <typename T>
void col2im_acc(const T* cols, const ConvDims& d, int stride, int padding, int dilation, T* gx) {
    for (std::int64_t r = 0; r < d.ckk; ++r) {
        const std::int64_t c = r / (d.k * d.k);
        const std::int64_t ky = (r / d.k) % d.k;
        const std::int64_t kx = r % d.k;
        const T* row = cols + r * d.ncols;
        T* plane = gx + c * d.h * d.w;
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
            const std::int64_t iy = oy * stride - padding + ky * dilation;
            if (iy < 0 || iy >= d.h) continue;
            for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                const std::int64_t ix = ox * stride - padding + kx * dilation;
                if (ix >= 0 && ix < d.w) plane[iy * d.w + ix] += row[oy * d.ow + ox];
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels_t, int stride, int padding,
                 int dilation) {
    const ConvDims d = conv_dims(x.shape(), kernels_t.shape(), stride, padding, dilation);
    const bool direct = (d.k == 1 && stride == 1 && padding == 0);
    Tensor<T> out = Tensor<T>::zeros({d.c_out, d.oh, d.ow});
    if (direct) {
        mm_nn(kernels_t.data(), x.data(), out.data(), d.c_out, d.ckk, d.ncols);
    } else {
        std::vector<T> cols(static_cast<std::size_t>(d.ckk * d.ncols));
        im2col(x.data(), d, stride, padding, dilation, cols.data());
        mm_nn(kernels_t.data(), cols.data(), out.data(), d.c_out, d.ckk, d.ncols);
    }
    debug_check_finite(out, "conv2d");
    if (Tape<T>* tape = tape_for<T>(x.requires_grad() || kernels_t.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([x = x, kernels_t = kernels_t, out, d, stride, padding, dilation, direct]() mutable {
            const T* g = out.grad().data();
            if (direct) {
                if (kernels_t.requires_grad())
                    mm_nt(g, x.data(), kernels_t.grad().data(), d.c_out, d.ncols, d.ckk);
                if (x.requires_grad())
                    mm_tn(kernels_t.data(), g, x.grad().data(), d.c_out, d.ckk, d.ncols);
                return;
            }
            std::vector<T> cols(static_cast<std::size_t>(d.ckk * d.ncols));
            im2col(x.data(), d, stride, padding, dilation, cols.data());
            if (kernels_t.requires_grad())
                mm_nt(g, cols.data(), kernels_t.grad().data(), d.c_out, d.ncols, d.ckk);
            if (x.requires_grad()) {
                std::vector<T> gcols(static_cast<std::size_t>(d.ckk * d.ncols), T(0));
                mm_tn(kernels_t.data(), g, gcols.data(), d.c_out, d.ckk, d.ncols);
                col2im_acc(gcols.data(), d, stride, padding, dilation, x.grad().data());
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pool2d(PoolKind kind, const Tensor<T>& x, int window, int stride) {
    check_rank3(x.shape(), "pool2d");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (kind == PoolKind::kGlobalAvg) {
        Tensor<T> out = Tensor<T>::zeros({c, 1, 1});
        const T* px = x.data();
        T* po = out.data();
        const auto& kt = kernels::active<T>();
        const T inv = T(1) / static_cast<T>(h * w);
        for (std::int64_t ch = 0; ch < c; ++ch)
            po[ch] = kt.sum(px + ch * h * w, static_cast<std::size_t>(h * w)) * inv;
        if (Tape<T>* tape = tape_for<T>(x.requires_grad())) {
            out.set_requires_grad(true);
            tape->record([x = x, out, c, h, w, inv]() mutable {
                const T* g = out.grad().data();
                T* gx = x.grad().data();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T add = g[ch] * inv;
                    T* plane = gx + ch * h * w;
                    for (std::int64_t i = 0; i < h * w; ++i) plane[i] += add;
                }
            });
        }
        return out;
    }

    if (stride == 0) stride = window;
    if (window < 1 || stride < 1)
        throw ConfigError("pool2d: window and stride must be >= 1");
    if (window > h || window > w || (h - window) % stride != 0 || (w - window) % stride != 0)
        throw ShapeError("pool2d: window " + std::to_string(window) + " stride " +
                         std::to_string(stride) + " does not evenly tile " + shape_str(x.shape()));
    const std::int64_t oh = (h - window) / stride + 1;
    const std::int64_t ow = (w - window) / stride + 1;
    Tensor<T> out = Tensor<T>::zeros({c, oh, ow});
    const T* px = x.data();
    T* po = out.data();

    if (kind == PoolKind::kAvg) {
        const T inv = T(1) / static_cast<T>(window * window);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* plane = px + ch * h * w;
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    T s = T(0);
                    for (std::int64_t ky = 0; ky < window; ++ky)
                        for (std::int64_t kx = 0; kx < window; ++kx)
                            s += plane[(oy * stride + ky) * w + ox * stride + kx];
                    po[(ch * oh + oy) * ow + ox] = s * inv;
                }
        }
        if (Tape<T>* tape = tape_for<T>(x.requires_grad())) {
            out.set_requires_grad(true);
            tape->record([x = x, out, c, h, w, oh, ow, window, stride, inv]() mutable {
                const T* g = out.grad().data();
                T* gx = x.grad().data();
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    T* plane = gx + ch * h * w;
                    for (std::int64_t oy = 0; oy < oh; ++oy)
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                            const T add = g[(ch * oh + oy) * ow + ox] * inv;
                            for (std::int64_t ky = 0; ky < window; ++ky)
                                for (std::int64_t kx = 0; kx < window; ++kx)
                                    plane[(oy * stride + ky) * w + ox * stride + kx] += add;
                        }
                }
            });
        }
        return out;
    }

    // Max pooling; ties keep the first element in row-major window order.
    auto args = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(c * oh * ow));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* plane = px + ch * h * w;
        for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                T best = plane[(oy * stride) * w + ox * stride];
                std::int64_t argi = (oy * stride) * w + ox * stride;
                for (std::int64_t ky = 0; ky < window; ++ky)
                    for (std::int64_t kx = 0; kx < window; ++kx) {
                        const std::int64_t at = (oy * stride + ky) * w + ox * stride + kx;
                        if (plane[at] > best) {
                            best = plane[at];
                            argi = at;
                        }
                    }
                po[(ch * oh + oy) * ow + ox] = best;
                (*args)[static_cast<std::size_t>((ch * oh + oy) * ow + ox)] = ch * h * w + argi;
            }
    }
    if (Tape<T>* tape = tape_for<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([x = x, out, args]() mutable {
            const T* g = out.grad().data();
            T* gx = x.grad().data();
            for (std::int64_t i = 0; i < out.numel(); ++i)
                gx[(*args)[static_cast<std::size_t>(i)]] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
    check_rank3(x.shape(), "resize_bilinear");
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: output extents must be >= 1");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) {
        // Identity resize still yields a fresh tensor to keep op semantics uniform.
        Tensor<T> out = Tensor<T>::from_values(x.shape(),
                                               std::vector<T>(x.values().begin(), x.values().end()));
        if (Tape<T>* tape = tape_for<T>(x.requires_grad())) {
            out.set_requires_grad(true);
            tape->record([x = x, out]() mutable {
                kernels::active<T>().axpy(T(1), out.grad().data(), x.grad().data(),
                                          static_cast<std::size_t>(x.numel()));
            });
        }
        return out;
    }

    // align-corners=false sampling: src = (dst + 0.5) * in/out - 0.5, clamped.
    struct Tap {
        std::int64_t i0, i1;
        T f;
    };
    auto make_taps = [](std::int64_t in, std::int64_t on) {
        std::vector<Tap> taps(static_cast<std::size_t>(on));
        const double ratio = static_cast<double>(in) / static_cast<double>(on);
        for (std::int64_t d = 0; d < on; ++d) {
            double s = (static_cast<double>(d) + 0.5) * ratio - 0.5;
            if (s < 0.0) s = 0.0;
            if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
            const std::int64_t i0 = static_cast<std::int64_t>(std::floor(s));
            taps[static_cast<std::size_t>(d)] = {i0, std::min(i0 + 1, in - 1),
                                                 static_cast<T>(s - static_cast<double>(i0))};
        }
        return taps;
    };
    const auto ty = make_taps(h, out_h);
    const auto tx = make_taps(w, out_w);

    Tensor<T> out = Tensor<T>::zeros({c, out_h, out_w});
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* plane = px + ch * h * w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const Tap& y = ty[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const Tap& xx = tx[static_cast<std::size_t>(ox)];
                const T v00 = plane[y.i0 * w + xx.i0];
                const T v01 = plane[y.i0 * w + xx.i1];
                const T v10 = plane[y.i1 * w + xx.i0];
                const T v11 = plane[y.i1 * w + xx.i1];
                const T top = v00 + (v01 - v00) * xx.f;
                const T bot = v10 + (v11 - v10) * xx.f;
                po[(ch * out_h + oy) * out_w + ox] = top + (bot - top) * y.f;
            }
        }
    }
    if (Tape<T>* tape = tape_for<T>(x.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([x = x, out, ty, tx, c, h, w, out_h, out_w]() mutable {
            const T* g = out.grad().data();
            T* gx = x.grad().data();
            for (std::int64_t ch = 0; ch < c; ++ch) {
                T* plane = gx + ch * h * w;
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    const Tap& y = ty[static_cast<std::size_t>(oy)];
                    for (std::int64_t ox = 0; ox < out_w; ++ox) {
                        const Tap& xx = tx[static_cast<std::size_t>(ox)];
                        const T gi = g[(ch * out_h + oy) * out_w + ox];
                        plane[y.i0 * w + xx.i0] += gi * (T(1) - y.f) * (T(1) - xx.f);
                        plane[y.i0 * w + xx.i1] += gi * (T(1) - y.f) * xx.f;
                        plane[y.i1 * w + xx.i0] += gi * y.f * (T(1) - xx.f);
                        plane[y.i1 * w + xx.i1] += gi * y.f * xx.f;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    check_rank3(x.shape(), "upsample2x");
    return resize_bilinear(x, x.dim(1) * 2, x.dim(2) * 2);
}

template <typename T>
Tensor<T> downsample_half(const Tensor<T>& x) {
    check_rank3(x.shape(), "downsample_half");
    if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
        throw ShapeError("downsample_half needs even extents, got " + shape_str(x.shape()));
    return pool2d(PoolKind::kAvg, x, 2, 2);
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::int64_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<std::int64_t>(s0.size()))
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s0));
    std::int64_t axis_sum = 0;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank())
            throw ShapeError("concat: rank mismatch between parts");
        for (std::int64_t dmn = 0; dmn < p.rank(); ++dmn)
            if (dmn != axis && p.dim(dmn) != parts[0].dim(dmn))
                throw ShapeError("concat: shape " + shape_str(p.shape()) +
                                 " incompatible with " + shape_str(s0) + " on axis " +
                                 std::to_string(axis));
        axis_sum += p.dim(axis);
    }
    Shape os = s0;
    os[static_cast<std::size_t>(axis)] = axis_sum;
    Tensor<T> out = Tensor<T>::zeros(os);

    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < axis; ++i) outer *= s0[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];

    T* po = out.data();
    std::int64_t off_axis = 0;
    for (const auto& p : parts) {
        const std::int64_t pa = p.dim(axis);
        const T* pp = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(po + (o * axis_sum + off_axis) * inner, pp + o * pa * inner,
                        static_cast<std::size_t>(pa * inner) * sizeof(T));
        off_axis += pa;
    }

    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (Tape<T>* tape = tape_for<T>(any)) {
        out.set_requires_grad(true);
        std::vector<Tensor<T>> held(parts);
        tape->record([held, out, axis, outer, inner, axis_sum]() mutable {
            const T* g = out.grad().data();
            std::int64_t off_axis = 0;
            for (auto& p : held) {
                const std::int64_t pa = p.dim(axis);
                if (p.requires_grad()) {
                    T* gp = p.grad().data();
                    const auto& kt = kernels::active<T>();
                    for (std::int64_t o = 0; o < outer; ++o)
                        kt.axpy(T(1), g + (o * axis_sum + off_axis) * inner, gp + o * pa * inner,
                                static_cast<std::size_t>(pa * inner));
                }
                off_axis += pa;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " has " + std::to_string(a.numel()) +
                         " elements, target " + shape_str(shape) + " has " +
                         std::to_string(shape_numel(shape)));
    Tensor<T> out = Tensor<T>::from_values(std::move(shape),
                                           std::vector<T>(a.values().begin(), a.values().end()));
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out]() mutable {
            kernels::active<T>().axpy(T(1), out.grad().data(), a.grad().data(),
                                      static_cast<std::size_t>(a.numel()));
        });
    }
    return out;
}

namespace {

std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::int64_t>& axes) {
    const std::size_t r = a.shape().size();
    if (axes.size() != r) throw ShapeError("permute: axis list size mismatch");
    std::vector<bool> seen(r, false);
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t ax = axes[i];
        if (ax < 0 || ax >= static_cast<std::int64_t>(r) || seen[static_cast<std::size_t>(ax)])
            throw ShapeError("permute: axes must be a permutation of 0.." + std::to_string(r - 1));
        seen[static_cast<std::size_t>(ax)] = true;
        os[i] = a.shape()[static_cast<std::size_t>(ax)];
    }
    Tensor<T> out = Tensor<T>::zeros(os);
    const auto in_st = row_major_strides(a.shape());
    // Stride into the input for each output axis.
    std::vector<std::int64_t> st(r);
    for (std::size_t i = 0; i < r; ++i) st[i] = in_st[static_cast<std::size_t>(axes[i])];

    const T* pa = a.data();
    T* po = out.data();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ao = 0;
    for (std::int64_t o = 0; o < out.numel(); ++o) {
        po[o] = pa[ao];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ao += st[d];
            if (idx[d] < os[d]) break;
            ao -= st[d] * os[d];
            idx[d] = 0;
        }
    }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, st, os, r]() mutable {
            const T* g = out.grad().data();
            T* ga = a.grad().data();
            std::vector<std::int64_t> idx(r, 0);
            std::int64_t ao = 0;
            for (std::int64_t o = 0; o < out.numel(); ++o) {
                ga[ao] += g[o];
                for (std::size_t d = r; d-- > 0;) {
                    ++idx[d];
                    ao += st[d];
                    if (idx[d] < os[d]) break;
                    ao -= st[d] * os[d];
                    idx[d] = 0;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> select(const Tensor<T>& a, std::int64_t axis, std::int64_t index) {
    const AxisSplit sp = split_axis(a.shape(), axis, "select");
    if (index < 0 || index >= sp.mid)
        throw ShapeError("select: index " + std::to_string(index) + " out of range for axis " +
                         std::to_string(axis) + " of " + shape_str(a.shape()));
    Shape os;
    for (std::size_t i = 0; i < a.shape().size(); ++i)
        if (static_cast<std::int64_t>(i) != axis) os.push_back(a.shape()[i]);
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(po + o * sp.inner, pa + (o * sp.mid + index) * sp.inner,
                    static_cast<std::size_t>(sp.inner) * sizeof(T));
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, sp, index]() mutable {
            const T* g = out.grad().data();
            T* ga = a.grad().data();
            const auto& kt = kernels::active<T>();
            for (std::int64_t o = 0; o < sp.outer; ++o)
                kt.axpy(T(1), g + o * sp.inner, ga + (o * sp.mid + index) * sp.inner,
                        static_cast<std::size_t>(sp.inner));
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& a, std::int64_t axis, bool keepdim) {
    const AxisSplit sp = split_axis(a.shape(), axis, "reduce");
    Shape os;
    for (std::size_t i = 0; i < a.shape().size(); ++i) {
        if (static_cast<std::int64_t>(i) == axis) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(a.shape()[i]);
        }
    }
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t mid = sp.mid, inner = sp.inner;

    if (kind == ReduceKind::kSum || kind == ReduceKind::kMean) {
        const T scale = kind == ReduceKind::kMean ? T(1) / static_cast<T>(mid) : T(1);
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                T s = T(0);
                for (std::int64_t m = 0; m < mid; ++m) s += pa[(o * mid + m) * inner + in];
                po[o * inner + in] = s * scale;
            }
        if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
            out.set_requires_grad(true);
            tape->record([a = a, out, sp, scale]() mutable {
                const T* g = out.grad().data();
                T* ga = a.grad().data();
                const std::int64_t mid = sp.mid, inner = sp.inner;
                for (std::int64_t o = 0; o < sp.outer; ++o)
                    for (std::int64_t m = 0; m < mid; ++m)
                        for (std::int64_t in = 0; in < inner; ++in)
                            ga[(o * mid + m) * inner + in] += g[o * inner + in] * scale;
            });
        }
        return out;
    }

    // Min/max: subgradient goes to the first extremal element along the axis.
    const bool is_max = kind == ReduceKind::kMax;
    auto args = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(sp.outer * inner));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            T best = pa[(o * mid) * inner + in];
            std::int64_t bm = 0;
            for (std::int64_t m = 1; m < mid; ++m) {
                const T v = pa[(o * mid + m) * inner + in];
                if (is_max ? (v > best) : (v < best)) {
                    best = v;
                    bm = m;
                }
            }
            po[o * inner + in] = best;
            (*args)[static_cast<std::size_t>(o * inner + in)] = (o * mid + bm) * inner + in;
        }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, args]() mutable {
            const T* g = out.grad().data();
            T* ga = a.grad().data();
            for (std::int64_t i = 0; i < out.numel(); ++i)
                ga[(*args)[static_cast<std::size_t>(i)]] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_all(ReduceKind kind, const Tensor<T>& a) {
    if (a.numel() == 0) throw ShapeError("reduce_all on empty tensor");
    const T* pa = a.data();
    const std::int64_t n = a.numel();
    Tensor<T> out;
    std::int64_t arg = 0;
    switch (kind) {
        case ReduceKind::kSum:
            out = Tensor<T>::scalar(kernels::active<T>().sum(pa, static_cast<std::size_t>(n)));
            break;
        case ReduceKind::kMean:
            out = Tensor<T>::scalar(kernels::active<T>().sum(pa, static_cast<std::size_t>(n)) /
                                    static_cast<T>(n));
            break;
        case ReduceKind::kMin:
        case ReduceKind::kMax: {
            const bool is_max = kind == ReduceKind::kMax;
            T best = pa[0];
            for (std::int64_t i = 1; i < n; ++i)
                if (is_max ? (pa[i] > best) : (pa[i] < best)) {
                    best = pa[i];
                    arg = i;
                }
            out = Tensor<T>::scalar(best);
            break;
        }
    }
    if (Tape<T>* tape = tape_for<T>(a.requires_grad())) {
        out.set_requires_grad(true);
        tape->record([a = a, out, kind, arg, n]() mutable {
            const T g = out.grad()[0];
            T* ga = a.grad().data();
            switch (kind) {
                case ReduceKind::kSum:
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
                    break;
                case ReduceKind::kMean: {
                    const T s = g / static_cast<T>(n);
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += s;
                    break;
                }
                case ReduceKind::kMin:
                case ReduceKind::kMax:
                    ga[arg] += g;
                    break;
            }
        });
    }
    return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) throw ConfigError("backward() requires an active tape");
    tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define TEXSTAT_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> divide<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                      \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                      \
    template Tensor<T> neg<T>(const Tensor<T>&);                                                \
    template Tensor<T> exp<T>(const Tensor<T>&);                                                \
    template Tensor<T> abs<T>(const Tensor<T>&);                                                \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                            \
    template Tensor<T> relu<T>(const Tensor<T>&);                                               \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                          \
    template Tensor<T> softmax<T>(const Tensor<T>&, std::int64_t);                              \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int, int);            \
    template Tensor<T> pool2d<T>(PoolKind, const Tensor<T>&, int, int);                         \
    template Tensor<T> resize_bilinear<T>(const Tensor<T>&, std::int64_t, std::int64_t);        \
    template Tensor<T> upsample2x<T>(const Tensor<T>&);                                         \
    template Tensor<T> downsample_half<T>(const Tensor<T>&);                                    \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::int64_t);                  \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::int64_t>&);          \
    template Tensor<T> select<T>(const Tensor<T>&, std::int64_t, std::int64_t);                 \
    template Tensor<T> reduce<T>(ReduceKind, const Tensor<T>&, std::int64_t, bool);             \
    template Tensor<T> reduce_all<T>(ReduceKind, const Tensor<T>&);                             \
    template void backward<T>(const Tensor<T>&);

TEXSTAT_INSTANTIATE_OPS(float)
TEXSTAT_INSTANTIATE_OPS(double)

#undef TEXSTAT_INSTANTIATE_OPS

}  // namespace texstat
