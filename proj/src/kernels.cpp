#include "spvit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spvit::kernels {

namespace {

using Index = std::ptrdiff_t;

// C[m x n] = A[m x k] * B[k x n], all row-major, single thread.
template <typename T>
void gemm_nn_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    T* crow = c + i * n;
    std::fill(crow, crow + n, T(0));
    const T* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = arow[t];
      const T* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void im2col(const Conv2dShape& s, const T* x, T* col) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  const std::size_t plane = oh * ow;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    const T* xc = x + c * s.height * s.width;
    for (std::size_t u = 0; u < s.kernel_h; ++u) {
      for (std::size_t v = 0; v < s.kernel_w; ++v) {
        T* row = col + ((c * s.kernel_h + u) * s.kernel_w + v) * plane;
        for (std::size_t i = 0; i < oh; ++i) {
          const auto yy = static_cast<Index>(i * s.stride + u) - static_cast<Index>(s.padding);
          for (std::size_t j = 0; j < ow; ++j) {
            const auto xx = static_cast<Index>(j * s.stride + v) - static_cast<Index>(s.padding);
            const bool inside = yy >= 0 && yy < static_cast<Index>(s.height) && xx >= 0 &&
                                xx < static_cast<Index>(s.width);
            row[i * ow + j] = inside ? xc[yy * static_cast<Index>(s.width) + xx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Conv2dShape& s, const T* col, T* x) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  const std::size_t plane = oh * ow;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    T* xc = x + c * s.height * s.width;
    for (std::size_t u = 0; u < s.kernel_h; ++u) {
      for (std::size_t v = 0; v < s.kernel_w; ++v) {
        const T* row = col + ((c * s.kernel_h + u) * s.kernel_w + v) * plane;
        for (std::size_t i = 0; i < oh; ++i) {
          const auto yy = static_cast<Index>(i * s.stride + u) - static_cast<Index>(s.padding);
          if (yy < 0 || yy >= static_cast<Index>(s.height)) continue;
          for (std::size_t j = 0; j < ow; ++j) {
            const auto xx = static_cast<Index>(j * s.stride + v) - static_cast<Index>(s.padding);
            if (xx < 0 || xx >= static_cast<Index>(s.width)) continue;
            xc[yy * static_cast<Index>(s.width) + xx] += row[i * ow + j];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  const std::size_t m = s.m, n = s.n, k = s.k;
  const T* pa = a.data();
  const T* pb = b.data();
  std::vector<T> packed_a, packed_b;
  if (s.trans_a) {
    packed_a.resize(m * k);
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t i = 0; i < m; ++i) packed_a[i * k + t] = a[t * m + i];
    pa = packed_a.data();
  }
  if (s.trans_b) {
    packed_b.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) packed_b[t * n + j] = b[j * k + t];
    pb = packed_b.data();
  }
  T* pc = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    gemm_nn_rows(static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1, n, k, pa, pb, pc);
  }
}

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                    std::span<T> y) {
  const std::size_t plane = s.out_h() * s.out_w();
  const std::size_t ckk = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t in_size = s.in_channels * s.height * s.width;
#pragma omp parallel
  {
    std::vector<T> col(ckk * plane);
#pragma omp for schedule(static)
    for (Index nn = 0; nn < static_cast<Index>(s.batch); ++nn) {
      const auto n = static_cast<std::size_t>(nn);
      im2col(s, x.data() + n * in_size, col.data());
      T* yn = y.data() + n * s.filters * plane;
      gemm_nn_rows<T>(0, s.filters, plane, ckk, w.data(), col.data(), yn);
      for (std::size_t f = 0; f < s.filters; ++f) {
        for (std::size_t p = 0; p < plane; ++p) yn[f * plane + p] += bias[f];
      }
    }
  }
}

template <typename T>
void conv2d_backward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> dbias) {
  const std::size_t plane = s.out_h() * s.out_w();
  const std::size_t ckk = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t in_size = s.in_channels * s.height * s.width;
  const std::size_t out_size = s.filters * plane;

  if (!dbias.empty()) {
#pragma omp parallel for schedule(static)
    for (Index ff = 0; ff < static_cast<Index>(s.filters); ++ff) {
      const auto f = static_cast<std::size_t>(ff);
      T acc = 0;
      for (std::size_t n = 0; n < s.batch; ++n) {
        const T* d = dy.data() + n * out_size + f * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += d[p];
      }
      dbias[f] = acc;
    }
  }

  if (!dw.empty()) {
    std::fill(dw.begin(), dw.end(), T(0));
    std::vector<T> col(ckk * plane);
    for (std::size_t n = 0; n < s.batch; ++n) {
      im2col(s, x.data() + n * in_size, col.data());
      const T* dyn = dy.data() + n * out_size;
#pragma omp parallel for schedule(static)
      for (Index ff = 0; ff < static_cast<Index>(s.filters); ++ff) {
        const auto f = static_cast<std::size_t>(ff);
        const T* drow = dyn + f * plane;
        for (std::size_t r = 0; r < ckk; ++r) {
          const T* crow = col.data() + r * plane;
          // Running sum through dw keeps the reference's (n, i, j) order.
          T acc = dw[f * ckk + r];
          for (std::size_t p = 0; p < plane; ++p) acc += drow[p] * crow[p];
          dw[f * ckk + r] = acc;
        }
      }
    }
  }

  if (!dx.empty()) {
    std::fill(dx.begin(), dx.end(), T(0));
    // W^T as [ckk x filters] so the column gradient is a plain row-major product.
    std::vector<T> wt(ckk * s.filters);
    for (std::size_t f = 0; f < s.filters; ++f)
      for (std::size_t r = 0; r < ckk; ++r) wt[r * s.filters + f] = w[f * ckk + r];
#pragma omp parallel
    {
      std::vector<T> dcol(ckk * plane);
#pragma omp for schedule(static)
      for (Index nn = 0; nn < static_cast<Index>(s.batch); ++nn) {
        const auto n = static_cast<std::size_t>(nn);
        gemm_nn_rows<T>(0, ckk, plane, s.filters, wt.data(), dy.data() + n * out_size, dcol.data());
        col2im_add(s, dcol.data(), dx.data() + n * in_size);
      }
    }
  }
}

template <typename T>
void maxpool2d_forward(const PoolShape& s, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
#pragma omp parallel for schedule(static)
  for (Index pp = 0; pp < static_cast<Index>(s.planes); ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    const std::size_t base = p * s.height * s.width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + (i * s.stride) * s.width + j * s.stride;
        for (std::size_t u = 0; u < s.kernel; ++u) {
          for (std::size_t v = 0; v < s.kernel; ++v) {
            const std::size_t idx = base + (i * s.stride + u) * s.width + (j * s.stride + v);
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = x[best];
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y) {
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const T* in = x.data() + r * cols;
    T* out = y.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
  }
}

template <typename T>
void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const T> y, std::span<const T> dy,
                           std::span<T> dx) {
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const T* yr = y.data() + r * cols;
    const T* dyr = dy.data() + r * cols;
    T dot = 0;
    for (std::size_t j = 0; j < cols; ++j) dot += dyr[j] * yr[j];
    T* dxr = dx.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) dxr[j] = yr[j] * (dyr[j] - dot);
  }
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> x, std::span<const T> gamma,
                     std::span<const T> beta, std::span<T> y, std::span<T> xhat, std::span<T> inv_std) {
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const T* in = x.data() + r * cols;
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += in[j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < cols; ++j) {
      const T h = (in[j] - mean) * inv;
      xhat[r * cols + j] = h;
      y[r * cols + j] = h * gamma[j] + beta[j];
    }
  }
}

namespace reference {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      T acc = 0;
      for (std::size_t t = 0; t < s.k; ++t) {
        const T av = s.trans_a ? a[t * s.m + i] : a[i * s.k + t];
        const T bv = s.trans_b ? b[j * s.k + t] : b[t * s.n + j];
        acc += av * bv;
      }
      c[i * s.n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                    std::span<T> y) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t f = 0; f < s.filters; ++f)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T acc = 0;
          for (std::size_t c = 0; c < s.in_channels; ++c)
            for (std::size_t u = 0; u < s.kernel_h; ++u)
              for (std::size_t v = 0; v < s.kernel_w; ++v) {
                const auto yy = static_cast<Index>(i * s.stride + u) - static_cast<Index>(s.padding);
                const auto xx = static_cast<Index>(j * s.stride + v) - static_cast<Index>(s.padding);
                if (yy < 0 || xx < 0 || yy >= static_cast<Index>(s.height) || xx >= static_cast<Index>(s.width))
                  continue;
                acc += w[((f * s.in_channels + c) * s.kernel_h + u) * s.kernel_w + v] *
                       x[((n * s.in_channels + c) * s.height + static_cast<std::size_t>(yy)) * s.width +
                         static_cast<std::size_t>(xx)];
              }
          y[((n * s.filters + f) * oh + i) * ow + j] = acc + bias[f];
        }
}

template <typename T>
void conv2d_backward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> dbias) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  std::fill(dx.begin(), dx.end(), T(0));
  std::fill(dw.begin(), dw.end(), T(0));
  std::fill(dbias.begin(), dbias.end(), T(0));
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t f = 0; f < s.filters; ++f)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const T g = dy[((n * s.filters + f) * oh + i) * ow + j];
          if (!dbias.empty()) dbias[f] += g;
          for (std::size_t c = 0; c < s.in_channels; ++c)
            for (std::size_t u = 0; u < s.kernel_h; ++u)
              for (std::size_t v = 0; v < s.kernel_w; ++v) {
                const auto yy = static_cast<Index>(i * s.stride + u) - static_cast<Index>(s.padding);
                const auto xx = static_cast<Index>(j * s.stride + v) - static_cast<Index>(s.padding);
                if (yy < 0 || xx < 0 || yy >= static_cast<Index>(s.height) || xx >= static_cast<Index>(s.width))
                  continue;
                const std::size_t xi = ((n * s.in_channels + c) * s.height + static_cast<std::size_t>(yy)) * s.width +
                                       static_cast<std::size_t>(xx);
                const std::size_t wi = ((f * s.in_channels + c) * s.kernel_h + u) * s.kernel_w + v;
                if (!dw.empty()) dw[wi] += g * x[xi];
                if (!dx.empty()) dx[xi] += g * w[wi];
              }
        }
}

template <typename T>
void maxpool2d_forward(const PoolShape& s, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  for (std::size_t p = 0; p < s.planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t where = 0;
        bool first = true;
        for (std::size_t u = 0; u < s.kernel; ++u)
          for (std::size_t v = 0; v < s.kernel; ++v) {
            const std::size_t idx = (p * s.height + i * s.stride + u) * s.width + j * s.stride + v;
            if (first || x[idx] > best) {
              best = x[idx];
              where = idx;
              first = false;
            }
          }
        y[(p * oh + i) * ow + j] = best;
        argmax[(p * oh + i) * ow + j] = where;
      }
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> x, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / total;
  }
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> x, std::span<const T> gamma,
                     std::span<const T> beta, std::span<T> y, std::span<T> xhat, std::span<T> inv_std) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[r * cols + j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[r * cols + j] - mean) * (x[r * cols + j] - mean);
    var /= static_cast<T>(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[r * cols + j] = (x[r * cols + j] - mean) * inv_std[r];
      y[r * cols + j] = xhat[r * cols + j] * gamma[j] + beta[j];
    }
  }
}

}  // namespace reference

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

#define SPVIT_INSTANTIATE_KERNELS(T)                                                                               \
  template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>);                   \
  template void conv2d_forward<T>(const Conv2dShape&, std::span<const T>, std::span<const T>, std::span<const T>,  \
                                  std::span<T>);                                                                  \
  template void conv2d_backward<T>(const Conv2dShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>, std::span<T>);                                     \
  template void maxpool2d_forward<T>(const PoolShape&, std::span<const T>, std::span<T>, std::span<std::size_t>);  \
  template void softmax_rows<T>(std::size_t, std::size_t, std::span<const T>, std::span<T>);                       \
  template void softmax_rows_backward<T>(std::size_t, std::size_t, std::span<const T>, std::span<const T>,         \
                                         std::span<T>);                                                           \
  template void layer_norm_rows<T>(std::size_t, std::size_t, T, std::span<const T>, std::span<const T>,            \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>);                  \
  namespace reference {                                                                                            \
  template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>);                   \
  template void conv2d_forward<T>(const Conv2dShape&, std::span<const T>, std::span<const T>, std::span<const T>,  \
                                  std::span<T>);                                                                  \
  template void conv2d_backward<T>(const Conv2dShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>, std::span<T>);                                     \
  template void maxpool2d_forward<T>(const PoolShape&, std::span<const T>, std::span<T>, std::span<std::size_t>);  \
  template void softmax_rows<T>(std::size_t, std::size_t, std::span<const T>, std::span<T>);                       \
  template void layer_norm_rows<T>(std::size_t, std::size_t, T, std::span<const T>, std::span<const T>,            \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>);                  \
  }

SPVIT_INSTANTIATE_KERNELS(float)
SPVIT_INSTANTIATE_KERNELS(double)

#undef SPVIT_INSTANTIATE_KERNELS

}  // namespace spvit::kernels
