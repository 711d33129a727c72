#pragma once

#include <cstdint>
#include <vector>

#include "texstat/tensor.hpp"

// Two attention mechanisms shared across the network:
//  - comprehensive attention: parameter-free row/column attention built from
//    width- and height-pooled channel descriptors, residual form;
//  - local-window self-attention (LWSA): multi-head attention inside
//    non-overlapping K x K windows with learned per-head projections.

namespace texstat {

template <typename T>
struct AttentionParams {
    std::int64_t heads = 1;
    std::int64_t window = 1;
    Tensor<T> l_q;  // [heads x C/heads x C]
    Tensor<T> l_k;  // [heads x C/heads x C]
    Tensor<T> l_v;  // [heads x C/heads x C]
    Tensor<T> l_o;  // [C x C]
};

template <typename T>
AttentionParams<T> make_attention_params(std::int64_t channels, std::int64_t heads,
                                         std::int64_t window, std::mt19937_64& rng);

// Row-attention map per image row and column-attention map per image column;
// every C x C slice is row-stochastic.
template <typename T>
struct DirectionalAttentionMaps {
    Tensor<T> a_h;  // [H x C x C]
    Tensor<T> a_w;  // [W x C x C]
};

// F + row-direction term + column-direction term. Optionally exposes the
// directional maps for inspection.
template <typename T>
Tensor<T> comprehensive_attention(const Tensor<T>& f,
                                  DirectionalAttentionMaps<T>* maps = nullptr);

// [C x H x W] -> (H/K)*(W/K) windows of shape [K*K x C], row-major window
// order and row-major pixel order inside each window.
template <typename T>
std::vector<Tensor<T>> window_partition(const Tensor<T>& f, std::int64_t window);

// Exact inverse of window_partition for the given spatial extents.
template <typename T>
Tensor<T> window_merge(const std::vector<Tensor<T>>& windows, std::int64_t height,
                       std::int64_t width);

// Per window p, head h: softmax((Q_p Lq^T)(K_p Lk^T)^T / sqrt(C/heads)) *
// (V_p Lv^T); heads concatenated, projected by l_o, residual added to Q_p.
// Self-attention passes the same tensor for q, k, v. attention_out, when
// given, receives every row-stochastic weight matrix (window-major, head
// order inside).
template <typename T>
Tensor<T> lwsa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
               const AttentionParams<T>& params,
               std::vector<Tensor<T>>* attention_out = nullptr);

}  // namespace texstat
