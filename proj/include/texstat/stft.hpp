#pragma once

#include <cstdint>

#include "texstat/attention.hpp"
#include "texstat/ksco.hpp"
#include "texstat/tensor.hpp"

// Fusion transformer for the network bottleneck: structural texture from
// comprehensive attention + windowed self-attention, statistical texture
// from the counting operator, fused by a gate vector g =
// MLP(concat(alpha * global-pool(O_str), row-sums(S))) broadcast over space.

namespace texstat {

template <typename T>
struct StftParams {
    std::int64_t n_levels = 0;
    bool use_ca = true;            // comprehensive attention before LWSA
    bool use_gate = true;          // statistical gate; off leaves O_str untouched
    bool excess_kurtosis = false;  // subtract 3 from the fourth moment
    KscoAggregateParams<T> ksco;
    AttentionParams<T> attn;
    // Present only when use_gate: learnable scalar alpha (init 1) and the
    // two-layer fusion MLP (C+N -> C -> C); the output layer starts at zero
    // so the gate is neutral at initialization.
    Tensor<T> alpha;
    Tensor<T> mlp_w1;  // [C x (C+N)]
    Tensor<T> mlp_b1;  // [C x 1]
    Tensor<T> mlp_w2;  // [C x C]
    Tensor<T> mlp_b2;  // [C x 1]
};

template <typename T>
StftParams<T> make_stft_params(std::int64_t channels, std::int64_t n_levels, std::int64_t heads,
                               std::int64_t window, bool use_gate, std::mt19937_64& rng);

template <typename T>
struct StftResult {
    Tensor<T> fusion;  // [C x H x W]
    QuantizedIntensityEmbedding<T> embedding;
};

// Intermediate values exposed for inspection.
template <typename T>
struct StftTrace {
    Tensor<T> o_str;       // after CA + LWSA
    Tensor<T> o_q;         // [C x 1] pooled descriptor
    Tensor<T> s_q;         // [N x 1] embedding row sums
    Tensor<T> gate_input;  // [(C+N) x 1]
    Tensor<T> gate;        // [C x 1]
};

// freeze: capture-or-replay slot for the counting statistics, needed by
// difference-quotient checks (the statistics are forward-pass constants).
template <typename T>
StftResult<T> stft_forward(const Tensor<T>& f, const StftParams<T>& params,
                           KscoFreeze<T>* freeze = nullptr, StftTrace<T>* trace = nullptr);

}  // namespace texstat
