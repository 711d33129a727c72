#pragma once

#include <cstdint>
#include <vector>

#include "texstat/tensor.hpp"

// Statistical counting operator: collapses a feature map to one channel,
// quantizes its value range into N uniform levels, and emits a kurtosis-
// weighted indicator embedding S of shape N x (H*W). Each spatial position
// activates at most one level (the nearest, when strictly inside its
// half-width bin), with value |K| * e^(|x - W_n| - 1).

namespace texstat {

template <typename T>
struct QuantizationLevels {
    std::vector<T> levels;      // W_n for n = 1..N; levels.back() == hi
    std::int64_t n_levels = 0;  // N
    T lo = T(0);                // min of the aggregated map
    T hi = T(0);                // max of the aggregated map
    T half_width = T(0);        // (hi - lo) / (2N): activation radius per level
};

template <typename T>
struct KurtosisStats {
    T kurtosis = T(0);  // fourth standardized moment (optionally excess)
    T mean = T(0);
    T std = T(0);  // sample standard deviation, divisor T-1
    std::int64_t count = 0;
    bool degenerate = false;  // std < 1e-8; forces kurtosis (and S) to 0
};

template <typename T>
struct QuantizedIntensityEmbedding {
    Tensor<T> s;  // N x (H*W)
    QuantizationLevels<T> levels;
    KurtosisStats<T> stats;
    std::int64_t height = 0;
    std::int64_t width = 0;
};

// Two stacked 1x1 convolutions with bias, C -> max(C/2,1) -> 1, then
// sigmoid.
template <typename T>
struct KscoAggregateParams {
    Tensor<T> w1;  // [mid x C x 1 x 1]
    Tensor<T> b1;  // [mid x 1 x 1]
    Tensor<T> w2;  // [1 x mid x 1 x 1]
    Tensor<T> b2;  // [1 x 1 x 1]
};

template <typename T>
KscoAggregateParams<T> make_ksco_aggregate_params(std::int64_t channels, std::mt19937_64& rng);

// [C x H x W] -> [1 x H x W], every output in (0, 1).
template <typename T>
Tensor<T> aggregate(const Tensor<T>& f, const KscoAggregateParams<T>& p);

// Uniform levels W_n = (n*(hi-lo) + N*lo)/N over the observed value range.
// Statistics are taken from current values; no gradient flows into them.
template <typename T>
QuantizationLevels<T> quantization_levels(const Tensor<T>& fa, std::int64_t n_levels);

// Fourth standardized moment of the map's values (excess subtracts 3).
// Needs at least 2 elements for the sample deviation.
template <typename T>
KurtosisStats<T> kurtosis(const Tensor<T>& fa, bool excess = false);

// The counting step. Levels and stats are constants of the forward pass:
// gradient reaches fa only through the exponential inside active bins.
template <typename T>
QuantizedIntensityEmbedding<T> quantized_intensity(const Tensor<T>& fa,
                                                   const QuantizationLevels<T>& levels,
                                                   const KurtosisStats<T>& stats);

// aggregate -> quantization_levels -> kurtosis -> quantized_intensity.
// fixed_levels/fixed_stats replay captured statistics instead of
// recomputing them; difference-quotient checks need this because the
// statistics are constants of the forward pass.
template <typename T>
QuantizedIntensityEmbedding<T> ksco(const Tensor<T>& f, std::int64_t n_levels,
                                    const KscoAggregateParams<T>& p, bool excess = false,
                                    const QuantizationLevels<T>* fixed_levels = nullptr,
                                    const KurtosisStats<T>* fixed_stats = nullptr);

// One-slot capture-or-replay: an unfilled slot records the statistics of
// this call; a filled slot replays them.
template <typename T>
struct KscoFreeze {
    bool filled = false;
    QuantizationLevels<T> levels;
    KurtosisStats<T> stats;
};

template <typename T>
QuantizedIntensityEmbedding<T> ksco(const Tensor<T>& f, std::int64_t n_levels,
                                    const KscoAggregateParams<T>& p, bool excess,
                                    KscoFreeze<T>* freeze);

}  // namespace texstat
