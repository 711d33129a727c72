#include "texstat/stet.hpp"

#include <cmath>

#include "texstat/ops.hpp"

namespace texstat {

namespace {

template <typename T>
Tensor<T> init_conv(Shape shape, std::mt19937_64& rng) {
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

template <typename T>
StetParams<T> make_stet_params(std::int64_t q_levels, std::int64_t n_levels,
                               const std::vector<std::int64_t>& enc_channels, std::int64_t heads,
                               std::int64_t window, std::mt19937_64& rng) {
    if (q_levels < 1 || n_levels < 1)
        throw ConfigError("stet needs positive level counts");
    if (enc_channels.size() != 3)
        throw ConfigError("stet expects exactly three encoder scales, got " +
                          std::to_string(enc_channels.size()));
    StetParams<T> p;
    p.n_levels = n_levels;
    const std::int64_t d = n_levels;
    for (std::int64_t ch : enc_channels)
        p.ksco.push_back(make_ksco_aggregate_params<T>(ch, rng));
    p.proj_q_w = init_conv<T>({d, q_levels, 1, 1}, rng);
    p.proj_q_b = Tensor<T>::param({d, 1, 1});
    p.proj_kv_w = init_conv<T>({d, 3 * d, 1, 1}, rng);
    p.proj_kv_b = Tensor<T>::param({d, 1, 1});
    p.attn = make_attention_params<T>(d, heads, window, rng);
    p.ffn_d1_w = init_conv<T>({d, d, 3, 3}, rng);
    p.ffn_d1_b = Tensor<T>::param({d, 1, 1});
    p.ffn_d6_w = init_conv<T>({d, d, 3, 3}, rng);
    p.ffn_d6_b = Tensor<T>::param({d, 1, 1});
    p.ffn_d12_w = init_conv<T>({d, d, 3, 3}, rng);
    p.ffn_d12_b = Tensor<T>::param({d, 1, 1});
    p.ffn_m1_w = init_conv<T>({d, d, 1, 1}, rng);
    p.ffn_m1_b = Tensor<T>::param({d, 1, 1});
    p.ffn_m2_w = init_conv<T>({d, d, 1, 1}, rng);
    p.ffn_m2_b = Tensor<T>::param({d, 1, 1});
    return p;
}

template <typename T>
QkvTriple<T> multiscale_embedding(const QuantizedIntensityEmbedding<T>& s_stft,
                                  const std::vector<Tensor<T>>& enc_feats,
                                  const StetParams<T>& params,
                                  std::vector<KscoFreeze<T>>* freeze) {
    if (enc_feats.size() != params.ksco.size())
        throw ConfigError("stet built for " + std::to_string(params.ksco.size()) +
                          " encoder scales, got " + std::to_string(enc_feats.size()));
    if (freeze && freeze->empty()) freeze->resize(enc_feats.size());

    // Query path: embedding as a map, doubled spatially.
    Tensor<T> s_map = reshape(s_stft.s, {s_stft.s.dim(0), s_stft.height, s_stft.width});
    Tensor<T> up = resize_bilinear(s_map, s_stft.height * 2, s_stft.width * 2);
    Tensor<T> qp = params.use_ca ? comprehensive_attention(up) : up;
    QkvTriple<T> out;
    out.q = add(conv2d(qp, params.proj_q_w), params.proj_q_b);
    const std::int64_t qh = out.q.dim(1), qw = out.q.dim(2);

    std::vector<Tensor<T>> maps;
    maps.reserve(enc_feats.size());
    for (std::size_t k = 0; k < enc_feats.size(); ++k) {
        KscoFreeze<T>* fz = freeze ? &(*freeze)[k] : nullptr;
        QuantizedIntensityEmbedding<T> emb =
            ksco(enc_feats[k], params.n_levels, params.ksco[k], params.excess_kurtosis, fz);
        Tensor<T> map = reshape(emb.s, {params.n_levels, emb.height, emb.width});
        if (emb.height % qh != 0 || emb.width % qw != 0 ||
            emb.height / qh != emb.width / qw)
            throw ConfigError("stet: encoder scale " + std::to_string(k) + " map " +
                              shape_str(map.shape()) + " cannot pool to the " +
                              std::to_string(qh) + "x" + std::to_string(qw) + " query grid");
        const std::int64_t win = emb.height / qh;
        if (win > 1) map = pool2d(PoolKind::kAvg, map, static_cast<int>(win), static_cast<int>(win));
        maps.push_back(map);
    }
    Tensor<T> kv = add(conv2d(concat(maps, 0), params.proj_kv_w), params.proj_kv_b);
    out.k = kv;
    out.v = kv;
    return out;
}

template <typename T>
Tensor<T> texture_enhanced_ffn(const Tensor<T>& x, const StetParams<T>& params) {
    Tensor<T> y = add(x, add(conv2d(x, params.ffn_d1_w, 1, 1, 1), params.ffn_d1_b));
    y = add(y, add(conv2d(x, params.ffn_d6_w, 1, 6, 6), params.ffn_d6_b));
    y = add(y, add(conv2d(x, params.ffn_d12_w, 1, 12, 12), params.ffn_d12_b));
    Tensor<T> h = relu(add(conv2d(y, params.ffn_m1_w), params.ffn_m1_b));
    Tensor<T> m = add(conv2d(h, params.ffn_m2_w), params.ffn_m2_b);
    return add(y, m);
}

template <typename T>
Tensor<T> stet_forward(const QuantizedIntensityEmbedding<T>& s_stft,
                       const std::vector<Tensor<T>>& enc_feats, const StetParams<T>& params,
                       std::vector<KscoFreeze<T>>* freeze) {
    QkvTriple<T> qkv = multiscale_embedding(s_stft, enc_feats, params, freeze);
    Tensor<T> attended = lwsa(qkv.q, qkv.k, qkv.v, params.attn);
    return texture_enhanced_ffn(attended, params);
}

#define TEXSTAT_INSTANTIATE_STET(T)                                                             \
    template StetParams<T> make_stet_params<T>(std::int64_t, std::int64_t,                      \
                                               const std::vector<std::int64_t>&, std::int64_t,  \
                                               std::int64_t, std::mt19937_64&);                 \
    template QkvTriple<T> multiscale_embedding<T>(const QuantizedIntensityEmbedding<T>&,        \
                                                  const std::vector<Tensor<T>>&,                \
                                                  const StetParams<T>&,                         \
                                                  std::vector<KscoFreeze<T>>*);                 \
    template Tensor<T> texture_enhanced_ffn<T>(const Tensor<T>&, const StetParams<T>&);         \
    template Tensor<T> stet_forward<T>(const QuantizedIntensityEmbedding<T>&,                   \
                                       const std::vector<Tensor<T>>&, const StetParams<T>&,     \
                                       std::vector<KscoFreeze<T>>*);

TEXSTAT_INSTANTIATE_STET(float)
TEXSTAT_INSTANTIATE_STET(double)

#undef TEXSTAT_INSTANTIATE_STET

}  // namespace texstat
