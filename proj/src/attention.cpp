#include "texstat/attention.hpp"

#include <cmath>

#include "texstat/ops.hpp"

namespace texstat {

namespace {

template <typename T>
Tensor<T> init_proj(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

template <typename T>
AttentionParams<T> make_attention_params(std::int64_t channels, std::int64_t heads,
                                         std::int64_t window, std::mt19937_64& rng) {
    if (heads < 1 || channels < 1 || channels % heads != 0)
        throw ConfigError("attention: channels " + std::to_string(channels) +
                          " must be a positive multiple of heads " + std::to_string(heads));
    if (window < 1) throw ConfigError("attention: window must be >= 1");
    AttentionParams<T> p;
    p.heads = heads;
    p.window = window;
    const std::int64_t ch = channels / heads;
    p.l_q = init_proj<T>({heads, ch, channels}, channels, rng);
    p.l_k = init_proj<T>({heads, ch, channels}, channels, rng);
    p.l_v = init_proj<T>({heads, ch, channels}, channels, rng);
    p.l_o = init_proj<T>({channels, channels}, channels, rng);
    return p;
}

template <typename T>
Tensor<T> comprehensive_attention(const Tensor<T>& f, DirectionalAttentionMaps<T>* maps) {
    if (f.rank() != 3)
        throw ShapeError("comprehensive_attention expects C x H x W, got " +
                         shape_str(f.shape()));
    const std::int64_t c = f.dim(0), h = f.dim(1), w = f.dim(2);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));

    std::vector<Tensor<T>> row_terms, col_terms, a_h_slices, a_w_slices;
    row_terms.reserve(static_cast<std::size_t>(h));
    col_terms.reserve(static_cast<std::size_t>(w));

    for (std::int64_t row = 0; row < h; ++row) {
        Tensor<T> fr = select(f, 1, row);                       // [C x W]
        Tensor<T> v = reduce(ReduceKind::kMean, fr, 1, false);  // [C]
        Tensor<T> a = softmax(
            mul_scalar(matmul(reshape(v, {c, 1}), reshape(v, {1, c})), scale), 1);
        if (maps) a_h_slices.push_back(reshape(a, {1, c, c}));
        row_terms.push_back(reshape(matmul(a, fr), {c, 1, w}));
    }
    for (std::int64_t col = 0; col < w; ++col) {
        Tensor<T> fc = select(f, 2, col);                       // [C x H]
        Tensor<T> v = reduce(ReduceKind::kMean, fc, 1, false);  // [C]
        Tensor<T> a = softmax(
            mul_scalar(matmul(reshape(v, {c, 1}), reshape(v, {1, c})), scale), 1);
        if (maps) a_w_slices.push_back(reshape(a, {1, c, c}));
        col_terms.push_back(reshape(matmul(a, fc), {c, h, 1}));
    }
    if (maps) {
        maps->a_h = concat(a_h_slices, 0);
        maps->a_w = concat(a_w_slices, 0);
    }
    return add(add(f, concat(row_terms, 1)), concat(col_terms, 2));
}

template <typename T>
std::vector<Tensor<T>> window_partition(const Tensor<T>& f, std::int64_t window) {
    if (f.rank() != 3)
        throw ShapeError("window_partition expects C x H x W, got " + shape_str(f.shape()));
    const std::int64_t c = f.dim(0), h = f.dim(1), w = f.dim(2);
    if (window < 1 || h % window != 0 || w % window != 0)
        throw ConfigError("window " + std::to_string(window) + " must divide spatial extents of " +
                          shape_str(f.shape()));
    const std::int64_t wh = h / window, ww = w / window;
    Tensor<T> grid = permute(reshape(f, {c, wh, window, ww, window}), {1, 3, 2, 4, 0});
    Tensor<T> stacked = reshape(grid, {wh * ww, window * window, c});
    std::vector<Tensor<T>> out;
    out.reserve(static_cast<std::size_t>(wh * ww));
    for (std::int64_t p = 0; p < wh * ww; ++p) out.push_back(select(stacked, 0, p));
    return out;
}

template <typename T>
Tensor<T> window_merge(const std::vector<Tensor<T>>& windows, std::int64_t height,
                       std::int64_t width) {
    if (windows.empty()) throw ShapeError("window_merge of zero windows");
    const Shape& ws = windows[0].shape();
    if (ws.size() != 2) throw ShapeError("window_merge expects K*K x C windows");
    const std::int64_t k = static_cast<std::int64_t>(
        std::llround(std::sqrt(static_cast<double>(ws[0]))));
    const std::int64_t c = ws[1];
    if (k * k != ws[0]) throw ShapeError("window row count is not a square");
    if (k < 1 || height % k != 0 || width % k != 0 ||
        static_cast<std::int64_t>(windows.size()) != (height / k) * (width / k))
        throw ShapeError("window_merge: " + std::to_string(windows.size()) +
                         " windows of edge " + std::to_string(k) + " do not tile " +
                         std::to_string(height) + "x" + std::to_string(width));
    std::vector<Tensor<T>> rows;
    rows.reserve(windows.size());
    for (const auto& wnd : windows) rows.push_back(reshape(wnd, {1, k * k, c}));
    Tensor<T> grid = reshape(concat(rows, 0), {height / k, width / k, k, k, c});
    return reshape(permute(grid, {4, 0, 2, 1, 3}), {c, height, width});
}

template <typename T>
Tensor<T> lwsa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
               const AttentionParams<T>& params, std::vector<Tensor<T>>* attention_out) {
    if (q.shape() != k.shape() || q.shape() != v.shape())
        throw ShapeError("lwsa: q/k/v shapes differ: " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    if (q.rank() != 3) throw ShapeError("lwsa expects C x H x W, got " + shape_str(q.shape()));
    const std::int64_t c = q.dim(0), h = q.dim(1), w = q.dim(2);
    if (c % params.heads != 0)
        throw ShapeError("lwsa: channels " + std::to_string(c) + " not divisible by heads " +
                         std::to_string(params.heads));
    if (params.l_q.dim(2) != c)
        throw ShapeError("lwsa: projections built for " + std::to_string(params.l_q.dim(2)) +
                         " channels, input has " + std::to_string(c));
    const T scale = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(c) / static_cast<double>(params.heads)));

    // [C x C/heads] right-multiplication forms, hoisted out of the loops.
    std::vector<Tensor<T>> pq, pk, pv;
    for (std::int64_t head = 0; head < params.heads; ++head) {
        pq.push_back(transpose(select(params.l_q, 0, head)));
        pk.push_back(transpose(select(params.l_k, 0, head)));
        pv.push_back(transpose(select(params.l_v, 0, head)));
    }

    auto qw = window_partition(q, params.window);
    auto kw = window_partition(k, params.window);
    auto vw = window_partition(v, params.window);

    std::vector<Tensor<T>> merged;
    merged.reserve(qw.size());
    for (std::size_t p = 0; p < qw.size(); ++p) {
        std::vector<Tensor<T>> heads;
        heads.reserve(static_cast<std::size_t>(params.heads));
        for (std::int64_t head = 0; head < params.heads; ++head) {
            const auto hi = static_cast<std::size_t>(head);
            Tensor<T> qh = matmul(qw[p], pq[hi]);
            Tensor<T> kh = matmul(kw[p], pk[hi]);
            Tensor<T> vh = matmul(vw[p], pv[hi]);
            Tensor<T> attn = softmax(mul_scalar(matmul(qh, transpose(kh)), scale), 1);
            if (attention_out) attention_out->push_back(attn);
            heads.push_back(matmul(attn, vh));
        }
        merged.push_back(add(qw[p], matmul(concat(heads, 1), params.l_o)));
    }
    return window_merge(merged, h, w);
}

#define TEXSTAT_INSTANTIATE_ATTENTION(T)                                                        \
    template AttentionParams<T> make_attention_params<T>(std::int64_t, std::int64_t,            \
                                                         std::int64_t, std::mt19937_64&);       \
    template Tensor<T> comprehensive_attention<T>(const Tensor<T>&,                             \
                                                  DirectionalAttentionMaps<T>*);                \
    template std::vector<Tensor<T>> window_partition<T>(const Tensor<T>&, std::int64_t);        \
    template Tensor<T> window_merge<T>(const std::vector<Tensor<T>>&, std::int64_t,             \
                                       std::int64_t);                                           \
    template Tensor<T> lwsa<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                               const AttentionParams<T>&, std::vector<Tensor<T>>*);

TEXSTAT_INSTANTIATE_ATTENTION(float)
TEXSTAT_INSTANTIATE_ATTENTION(double)

#undef TEXSTAT_INSTANTIATE_ATTENTION

}  // namespace texstat
