#include "texstat/ksco.hpp"

#include <algorithm>
#include <cmath>

#include "texstat/kernels.hpp"
#include "texstat/ops.hpp"

namespace texstat {

namespace {

template <typename T>
void check_map(const Tensor<T>& fa, const char* op) {
    if (fa.rank() != 3 || fa.dim(0) != 1)
        throw ShapeError(std::string(op) + " expects a 1 x H x W map, got " +
                         shape_str(fa.shape()));
}

// Fan-in scaled uniform init, the same convention the backbone uses.
template <typename T>
Tensor<T> init_weight(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

template <typename T>
KscoAggregateParams<T> make_ksco_aggregate_params(std::int64_t channels, std::mt19937_64& rng) {
    if (channels < 1) throw ConfigError("aggregate needs at least one input channel");
    const std::int64_t mid = std::max<std::int64_t>(channels / 2, 1);
    KscoAggregateParams<T> p;
    p.w1 = init_weight<T>({mid, channels, 1, 1}, channels, rng);
    p.b1 = Tensor<T>::param({mid, 1, 1});
    p.w2 = init_weight<T>({1, mid, 1, 1}, mid, rng);
    p.b2 = Tensor<T>::param({1, 1, 1});
    return p;
}

template <typename T>
Tensor<T> aggregate(const Tensor<T>& f, const KscoAggregateParams<T>& p) {
    if (f.rank() != 3)
        throw ShapeError("aggregate expects a C x H x W tensor, got " + shape_str(f.shape()));
    if (f.dim(0) != p.w1.dim(1))
        throw ShapeError("aggregate channel mismatch: input " + shape_str(f.shape()) +
                         " vs weight " + shape_str(p.w1.shape()));
    Tensor<T> h = add(conv2d(f, p.w1), p.b1);
    Tensor<T> o = add(conv2d(h, p.w2), p.b2);
    return sigmoid(o);
}

template <typename T>
QuantizationLevels<T> quantization_levels(const Tensor<T>& fa, std::int64_t n_levels) {
    check_map(fa, "quantization_levels");
    if (n_levels < 1) throw ConfigError("quantization_levels: N must be >= 1");
    QuantizationLevels<T> q;
    q.n_levels = n_levels;
    kernels::active<T>().minmax(fa.data(), static_cast<std::size_t>(fa.numel()), &q.lo, &q.hi);
    q.half_width = (q.hi - q.lo) / static_cast<T>(2 * n_levels);
    q.levels.resize(static_cast<std::size_t>(n_levels));
    for (std::int64_t n = 1; n <= n_levels; ++n)
        q.levels[static_cast<std::size_t>(n - 1)] =
            (static_cast<T>(n) * (q.hi - q.lo) + static_cast<T>(n_levels) * q.lo) /
            static_cast<T>(n_levels);
    // n = N must reproduce the maximum exactly, not just to rounding.
    q.levels.back() = q.hi;
    return q;
}

template <typename T>
KurtosisStats<T> kurtosis(const Tensor<T>& fa, bool excess) {
    check_map(fa, "kurtosis");
    const std::int64_t t = fa.numel();
    if (t < 2) throw ShapeError("kurtosis needs at least 2 elements for the sample deviation");
    const T* p = fa.data();
    double mean = 0.0;
    for (std::int64_t i = 0; i < t; ++i) mean += static_cast<double>(p[i]);
    mean /= static_cast<double>(t);
    double m2 = 0.0;
    for (std::int64_t i = 0; i < t; ++i) {
        const double d = static_cast<double>(p[i]) - mean;
        m2 += d * d;
    }
    const double sigma = std::sqrt(m2 / static_cast<double>(t - 1));

    KurtosisStats<T> s;
    s.mean = static_cast<T>(mean);
    s.std = static_cast<T>(sigma);
    s.count = t;
    if (sigma < 1e-8) {
        s.degenerate = true;
        s.kurtosis = T(0);
        return s;
    }
    double k = 0.0;
    for (std::int64_t i = 0; i < t; ++i) {
        const double z = (static_cast<double>(p[i]) - mean) / sigma;
        const double z2 = z * z;
        k += z2 * z2;
    }
    k /= static_cast<double>(t);
    if (excess) k -= 3.0;
    s.kurtosis = static_cast<T>(k);
    return s;
}

namespace {

// At most three levels can be near x; visiting them in increasing n keeps
// the result identical to a full scan over all N levels.
template <typename T, typename F>
void for_each_active_bin(T x, const QuantizationLevels<T>& q, F&& f) {
    if (q.half_width <= T(0)) return;
    const T step = q.half_width * T(2);
    const double pos = static_cast<double>((x - q.lo) / step);
    const std::int64_t guess = static_cast<std::int64_t>(std::llround(pos));
    for (std::int64_t n = std::max<std::int64_t>(guess - 1, 1);
         n <= std::min<std::int64_t>(guess + 1, q.n_levels); ++n) {
        const T delta = x - q.levels[static_cast<std::size_t>(n - 1)];
        if (std::fabs(static_cast<double>(delta)) < static_cast<double>(q.half_width))
            f(n - 1, delta);
    }
}

}  // namespace

template <typename T>
QuantizedIntensityEmbedding<T> quantized_intensity(const Tensor<T>& fa,
                                                   const QuantizationLevels<T>& levels,
                                                   const KurtosisStats<T>& stats) {
    check_map(fa, "quantized_intensity");
    QuantizedIntensityEmbedding<T> out;
    out.levels = levels;
    out.stats = stats;
    out.height = fa.dim(1);
    out.width = fa.dim(2);
    const std::int64_t t = fa.numel();
    out.s = Tensor<T>::zeros({levels.n_levels, t});

    const T weight = stats.degenerate ? T(0) : std::fabs(stats.kurtosis);
    if (weight == T(0)) return out;

    const T* px = fa.data();
    T* ps = out.s.data();
    for (std::int64_t i = 0; i < t; ++i) {
        for_each_active_bin(px[i], levels, [&](std::int64_t row, T delta) {
            ps[row * t + i] = weight * std::exp(std::fabs(delta) - T(1));
        });
    }

    if (Tape<T>* tape = active_tape<T>(); tape && fa.requires_grad()) {
        out.s.set_requires_grad(true);
        Tensor<T> s = out.s;
        tape->record([fa = fa, s, levels, t]() mutable {
            const T* g = s.grad().data();
            const T* ps = s.data();
            const T* px = fa.data();
            T* ga = fa.grad().data();
            for (std::int64_t i = 0; i < t; ++i) {
                for_each_active_bin(px[i], levels, [&](std::int64_t row, T delta) {
                    // d/dx of w*e^(|x-W|-1) is the value itself times sign.
                    const T sign = delta > T(0) ? T(1) : (delta < T(0) ? T(-1) : T(0));
                    ga[i] += g[row * t + i] * ps[row * t + i] * sign;
                });
            }
        });
    }
    return out;
}

template <typename T>
QuantizedIntensityEmbedding<T> ksco(const Tensor<T>& f, std::int64_t n_levels,
                                    const KscoAggregateParams<T>& p, bool excess,
                                    const QuantizationLevels<T>* fixed_levels,
                                    const KurtosisStats<T>* fixed_stats) {
    Tensor<T> fa = aggregate(f, p);
    const QuantizationLevels<T> levels =
        fixed_levels ? *fixed_levels : quantization_levels(fa, n_levels);
    const KurtosisStats<T> stats = fixed_stats ? *fixed_stats : kurtosis(fa, excess);
    return quantized_intensity(fa, levels, stats);
}

template <typename T>
QuantizedIntensityEmbedding<T> ksco(const Tensor<T>& f, std::int64_t n_levels,
                                    const KscoAggregateParams<T>& p, bool excess,
                                    KscoFreeze<T>* freeze) {
    if (freeze && freeze->filled)
        return ksco(f, n_levels, p, excess, &freeze->levels, &freeze->stats);
    QuantizedIntensityEmbedding<T> out = ksco(f, n_levels, p, excess);
    if (freeze) {
        freeze->levels = out.levels;
        freeze->stats = out.stats;
        freeze->filled = true;
    }
    return out;
}

#define TEXSTAT_INSTANTIATE_KSCO(T)                                                             \
    template KscoAggregateParams<T> make_ksco_aggregate_params<T>(std::int64_t,                 \
                                                                  std::mt19937_64&);            \
    template Tensor<T> aggregate<T>(const Tensor<T>&, const KscoAggregateParams<T>&);           \
    template QuantizationLevels<T> quantization_levels<T>(const Tensor<T>&, std::int64_t);      \
    template KurtosisStats<T> kurtosis<T>(const Tensor<T>&, bool);                              \
    template QuantizedIntensityEmbedding<T> quantized_intensity<T>(                             \
        const Tensor<T>&, const QuantizationLevels<T>&, const KurtosisStats<T>&);               \
    template QuantizedIntensityEmbedding<T> ksco<T>(const Tensor<T>&, std::int64_t,             \
                                                    const KscoAggregateParams<T>&, bool,        \
                                                    const QuantizationLevels<T>*,               \
                                                    const KurtosisStats<T>*);                   \
    template QuantizedIntensityEmbedding<T> ksco<T>(const Tensor<T>&, std::int64_t,             \
                                                    const KscoAggregateParams<T>&, bool,        \
                                                    KscoFreeze<T>*);

TEXSTAT_INSTANTIATE_KSCO(float)
TEXSTAT_INSTANTIATE_KSCO(double)

#undef TEXSTAT_INSTANTIATE_KSCO

}  // namespace texstat
