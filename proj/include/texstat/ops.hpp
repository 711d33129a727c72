#pragma once

#include <vector>

#include "texstat/tensor.hpp"

// Differentiable primitives. Every op computes values eagerly and, when a
// tape is active and an input requires grad, records a backward closure on
// it. Binary elementwise ops broadcast trailing dimensions numpy-style.

namespace texstat {

// Division by |b| < 1e-12 raises NumericError while strict mode is on
// (the default). The first offending flat index is named in the message.
void set_strict_division(bool on);
bool strict_division();

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T c);

template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);

// a: [m x k], b: [k x n] -> [m x n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// 2-D transpose.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::int64_t axis);

// x: [C_in x H x W], kernels: [C_out x C_in x k x k] -> [C_out x H' x W'].
// Cross-correlation semantics; no bias (add one via broadcast add).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, int stride = 1, int padding = 0,
                 int dilation = 1);

enum class PoolKind { kAvg, kMax, kGlobalAvg };

// x: [C x H x W]. Global average ignores window/stride and yields [C x 1 x 1].
template <typename T>
Tensor<T> pool2d(PoolKind kind, const Tensor<T>& x, int window = 0, int stride = 0);

// x: [C x H x W] -> [C x out_h x out_w], align-corners=false convention.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);
template <typename T> Tensor<T> upsample2x(const Tensor<T>& x);
// Factor-1/2 downsampling is 2x2 average pooling.
template <typename T> Tensor<T> downsample_half(const Tensor<T>& x);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::int64_t axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::int64_t>& axes);
// Drops `axis` by picking one index along it.
template <typename T> Tensor<T> select(const Tensor<T>& a, std::int64_t axis, std::int64_t index);

enum class ReduceKind { kSum, kMean, kMin, kMax };

// Reduce one axis (keepdim keeps it as extent 1). Min/max propagate the
// subgradient to the first extremal element.
template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& a, std::int64_t axis, bool keepdim = false);
// Full reduction to a scalar.
template <typename T> Tensor<T> reduce_all(ReduceKind kind, const Tensor<T>& a);

// Runs reverse accumulation on the active tape for a scalar loss.
template <typename T> void backward(const Tensor<T>& loss);

}  // namespace texstat
