#pragma once

// Differentiable tensor operations. Each op records a node on the thread's
// active GradTape when one is active and at least one input requires grad.
//
// Broadcasting: binary elementwise ops accept b whose shape, after dropping
// leading size-1 axes, equals a trailing suffix of a's shape (b repeats over
// a's leading axes). Any other mismatch is a DimensionError.

#include <cstddef>
#include <vector>

#include "spvit/tensor.hpp"

namespace spvit::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> erf(const Tensor<T>& x);
/// Subgradient 0 at 0.
template <typename T> Tensor<T> relu(const Tensor<T>& x);
/// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

/// Sum of all elements, shape [1].
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Reduces one axis; the axis is removed unless keepdim (rank-1 inputs reduce to [1]).
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim = false);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0, std::size_t axis1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Elements [start, stop) along `axis`.
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t stop);
/// Repeats x (shape [1 x ...]) along a new leading extent `count`.
template <typename T> Tensor<T> repeat_leading(const Tensor<T>& x, std::size_t count);

/// [m x k] x [k x n], or batched [B.. x m x k] x [B.. x k x n] with equal batch extents.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[... x in] W^T + b with W [out x in]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dParams params = {});

template <typename T> Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

/// Softmax over the last axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

/// [N x C x S x S] -> [N x P x C*p*p], patches in row-major order, each flattened channel-major.
template <typename T> Tensor<T> patchify(const Tensor<T>& images, std::size_t patch);
template <typename T> Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels, std::size_t patch);

}  // namespace spvit::ops
