#pragma once

#include <cstdint>
#include <vector>

#include "texstat/attention.hpp"
#include "texstat/ksco.hpp"
#include "texstat/tensor.hpp"

// Enhance transformer for the decoder: the bottleneck counting embedding is
// upsampled x2 into the query path, per-scale counting embeddings of three
// encoder features are pooled to the query grid and 1x1-projected into a
// shared key/value tensor, then windowed cross-attention and a feed-forward
// block with parallel dilated 3x3 convolutions (rates 1, 6, 12) follow.

namespace texstat {

template <typename T>
struct StetParams {
    std::int64_t n_levels = 0;  // per-scale level count; also the working width d
    bool use_ca = true;
    bool excess_kurtosis = false;
    std::vector<KscoAggregateParams<T>> ksco;  // one per encoder scale, shallow to deep
    Tensor<T> proj_q_w;   // [d x N_q x 1 x 1], N_q = bottleneck embedding levels
    Tensor<T> proj_q_b;   // [d x 1 x 1]
    Tensor<T> proj_kv_w;  // [d x 3d x 1 x 1]
    Tensor<T> proj_kv_b;  // [d x 1 x 1]
    AttentionParams<T> attn;
    // Texture-enhanced FFN: three dilated 3x3 branches plus a position-wise
    // two-layer MLP (1x1 convolutions), both residual.
    Tensor<T> ffn_d1_w, ffn_d1_b;
    Tensor<T> ffn_d6_w, ffn_d6_b;
    Tensor<T> ffn_d12_w, ffn_d12_b;
    Tensor<T> ffn_m1_w, ffn_m1_b;
    Tensor<T> ffn_m2_w, ffn_m2_b;
};

// enc_channels: channel widths of the three encoder features fed to the
// per-scale counting operators.
template <typename T>
StetParams<T> make_stet_params(std::int64_t q_levels, std::int64_t n_levels,
                               const std::vector<std::int64_t>& enc_channels, std::int64_t heads,
                               std::int64_t window, std::mt19937_64& rng);

template <typename T>
struct QkvTriple {
    Tensor<T> q, k, v;  // k and v are the same tensor by construction
};

// bottleneck embedding (+x2 upsample, optional comprehensive attention,
// 1x1 projection) -> Q; per-scale embeddings pooled to Q's grid,
// concatenated and 1x1-projected -> K = V.
// freeze: capture-or-replay slots for the per-scale counting statistics
// (resized to the scale count on first use).
template <typename T>
QkvTriple<T> multiscale_embedding(const QuantizedIntensityEmbedding<T>& s_stft,
                                  const std::vector<Tensor<T>>& enc_feats,
                                  const StetParams<T>& params,
                                  std::vector<KscoFreeze<T>>* freeze = nullptr);

// Y = X + branch_1(X) + branch_6(X) + branch_12(X); out = Y + MLP(Y).
template <typename T>
Tensor<T> texture_enhanced_ffn(const Tensor<T>& x, const StetParams<T>& params);

// multiscale_embedding -> lwsa(Q, K, V) -> texture_enhanced_ffn.
template <typename T>
Tensor<T> stet_forward(const QuantizedIntensityEmbedding<T>& s_stft,
                       const std::vector<Tensor<T>>& enc_feats, const StetParams<T>& params,
                       std::vector<KscoFreeze<T>>* freeze = nullptr);

}  // namespace texstat
