#pragma once

// Raw numeric kernels over contiguous row-major buffers.
//
// spvit::kernels holds the OpenMP-parallel versions used by the tensor ops.
// Every parallel loop partitions *output* elements only and each output keeps
// a fixed summation order, so results are bitwise identical for any thread
// count. spvit::kernels::reference holds straightforward serial loops kept for
// tests and benchmarks.

#include <cstddef>
#include <span>

namespace spvit::kernels {

struct GemmShape {
  std::size_t m = 0, n = 0, k = 0;
  bool trans_a = false;  // A stored as [k x m]
  bool trans_b = false;  // B stored as [n x k]
};

/// C[m x n] = op(A) * op(B). C is overwritten. Sums run over k in ascending order.
template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c);

struct Conv2dShape {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t filters = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

/// Cross-correlation: y[n,f,i,j] = b[f] + sum_{c,u,v} w[f,c,u,v] x[n,c,i*s+u-p,j*s+v-p].
template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

/// Gradients of conv2d_forward. Any of dx/dw/dbias may be empty to skip it.
/// Outputs are overwritten, not accumulated.
template <typename T>
void conv2d_backward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> dbias);

struct PoolShape {
  std::size_t planes = 0, height = 0, width = 0;  // planes = N*C
  std::size_t kernel = 2, stride = 2;
  std::size_t out_h() const { return (height - kernel) / stride + 1; }
  std::size_t out_w() const { return (width - kernel) / stride + 1; }
};

/// Window maxima; argmax receives the flat input index of the first maximum
/// in row-major window order.
template <typename T>
void maxpool2d_forward(const PoolShape& s, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax);

/// Row-wise numerically stable softmax over rows of length `cols`.
template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y);

/// dx = y * (dy - sum(dy * y)) per row.
template <typename T>
void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const T> y, std::span<const T> dy,
                           std::span<T> dx);

/// Per-row normalization; writes xhat and 1/sqrt(var+eps) per row.
template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> x, std::span<const T> gamma,
                     std::span<const T> beta, std::span<T> y, std::span<T> xhat, std::span<T> inv_std);

namespace reference {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c);

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);

template <typename T>
void conv2d_backward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> dbias);

template <typename T>
void maxpool2d_forward(const PoolShape& s, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax);

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y);

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> x, std::span<const T> gamma,
                     std::span<const T> beta, std::span<T> y, std::span<T> xhat, std::span<T> inv_std);

}  // namespace reference

/// Number of OpenMP threads kernels will use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace spvit::kernels
