#include "spvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string_view>

#include "spvit/kernels.hpp"
#include "spvit/tape.hpp"

namespace spvit::ops {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// Records `fn` as the backward of `out` when a tape is active and an input needs grad.
template <typename T, typename F>
void record(std::string_view op, Tensor<T>& out, std::initializer_list<Tensor<T>> inputs, F&& fn) {
  auto* tape = GradTape<T>::active();
  if (tape == nullptr) return;
  bool any = false;
  for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
  if (!any) return;
  out.set_requires_grad(true);
  typename GradTape<T>::Node node;
  node.op = op;
  for (const auto& t : inputs) {
    if (t.defined()) node.inputs.push_back(t.impl());
  }
  node.output = out.impl();
  node.backward = std::forward<F>(fn);
  tape->record(std::move(node));
}

template <typename T>
bool wants(const ImplPtr<T>& p) {
  return p && p->requires_grad;
}

// Period with which b repeats across a, or throws.
template <typename T>
std::size_t broadcast_period(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t first = 0;
  while (first < bs.size() && bs[first] == 1) ++first;
  const std::size_t tail = bs.size() - first;
  bool ok = tail <= as.size();
  for (std::size_t i = 0; ok && i < tail; ++i) ok = bs[first + i] == as[as.size() - tail + i];
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " + shape_str(as) +
                         " (only trailing-axis broadcast is supported)");
  }
  return b.numel();
}

template <typename T>
std::vector<T> reduce_period(std::span<const T> g, std::size_t period) {
  std::vector<T> out(period, T(0));
  for (std::size_t i = 0; i < g.size(); ++i) out[i % period] += g[i];
  return out;
}

template <typename T, typename Fwd, typename Dx>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, Fwd fwd, Dx dx_from_xy) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  auto xi = x.impl();
  auto yi = out.impl();
  record<T>(op, out, {x}, [xi, dx_from_xy](TensorImpl<T>& o) {
    std::vector<T> g(o.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * dx_from_xy(xi->data[i], o.data[i]);
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

struct Split3 {
  std::size_t outer = 1, len = 1, inner = 1;
};

Split3 split_at(const Shape& s, std::size_t axis) {
  Split3 r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t pb = broadcast_period("add", a, b);
  Tensor<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i % pb];
  auto ai = a.impl(), bi = b.impl();
  record<T>("add", out, {a, b}, [ai, bi, pb](TensorImpl<T>& o) {
    if (wants(ai)) accumulate_grad<T>(*ai, o.grad);
    if (wants(bi)) {
      auto g = reduce_period<T>(o.grad, pb);
      accumulate_grad<T>(*bi, g);
    }
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t pb = broadcast_period("sub", a, b);
  Tensor<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i % pb];
  auto ai = a.impl(), bi = b.impl();
  record<T>("sub", out, {a, b}, [ai, bi, pb](TensorImpl<T>& o) {
    if (wants(ai)) accumulate_grad<T>(*ai, o.grad);
    if (wants(bi)) {
      auto g = reduce_period<T>(o.grad, pb);
      for (auto& v : g) v = -v;
      accumulate_grad<T>(*bi, g);
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t pb = broadcast_period("mul", a, b);
  Tensor<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i % pb];
  auto ai = a.impl(), bi = b.impl();
  record<T>("mul", out, {a, b}, [ai, bi, pb](TensorImpl<T>& o) {
    const std::size_t n = o.grad.size();
    if (wants(ai)) {
      std::vector<T> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = o.grad[i] * bi->data[i % pb];
      accumulate_grad<T>(*ai, g);
    }
    if (wants(bi)) {
      std::vector<T> g(pb, T(0));
      for (std::size_t i = 0; i < n; ++i) g[i % pb] += o.grad[i] * ai->data[i];
      accumulate_grad<T>(*bi, g);
    }
  });
  return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t pb = broadcast_period("div", a, b);
  Tensor<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i % pb];
  auto ai = a.impl(), bi = b.impl();
  record<T>("div", out, {a, b}, [ai, bi, pb](TensorImpl<T>& o) {
    const std::size_t n = o.grad.size();
    if (wants(ai)) {
      std::vector<T> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = o.grad[i] / bi->data[i % pb];
      accumulate_grad<T>(*ai, g);
    }
    if (wants(bi)) {
      std::vector<T> g(pb, T(0));
      for (std::size_t i = 0; i < n; ++i) {
        const T bv = bi->data[i % pb];
        g[i % pb] -= o.grad[i] * ai->data[i] / (bv * bv);
      }
      accumulate_grad<T>(*bi, g);
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> erf(const Tensor<T>& x) {
  return unary<T>(
      "erf", x, [](T v) { return std::erf(v); },
      [](T v, T) { return T(2) / std::sqrt(std::numbers::pi_v<T>) * std::exp(-v * v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return unary<T>(
      "gelu", x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [=](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  auto xi = x.impl();
  record<T>("sum", out, {x}, [xi](TensorImpl<T>& o) {
    std::vector<T> g(xi->data.size(), o.grad[0]);
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  if (axis >= x.rank()) throw DimensionError("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const Split3 sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim || shape.size() == 1) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor<T> out(shape);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) ov[o * sp.inner + i] += xv[(o * sp.len + l) * sp.inner + i];
  auto xi = x.impl();
  record<T>("sum_axis", out, {x}, [xi, sp](TensorImpl<T>& og) {
    std::vector<T> g(xi->data.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] = og.grad[o * sp.inner + i];
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  if (axis >= x.rank()) throw DimensionError("mean: axis out of range for " + shape_str(x.shape()));
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.dim(axis)));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (spvit::numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.values());
  auto xi = x.impl();
  record<T>("reshape", out, {x}, [xi](TensorImpl<T>& o) { accumulate_grad<T>(*xi, o.grad); });
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis list does not match rank of " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // stride in the input for each output axis
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) strides[i] = in_strides[axes[i]];

  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    src[lin] = offset;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      offset += strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      offset -= strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  Tensor<T> out(out_shape);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[src[i]];
  auto xi = x.impl();
  record<T>("permute", out, {x}, [xi, src = std::move(src)](TensorImpl<T>& o) {
    std::vector<T> g(o.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[src[i]] = o.grad[i];
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  if (axis0 >= axes.size() || axis1 >= axes.size()) throw DimensionError("transpose: axis out of range");
  std::swap(axes[axis0], axes[axis1]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == axis || p.dim(i) == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first));
    out_shape[axis] += p.dim(axis);
  }
  const Split3 sp = split_at(out_shape, axis);
  Tensor<T> out(out_shape);
  auto ov = out.data();
  std::vector<std::size_t> begins;
  std::size_t at = 0;
  for (const auto& p : parts) {
    begins.push_back(at);
    const std::size_t chunk = p.dim(axis) * sp.inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  ov.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + at * sp.inner));
    at += p.dim(axis);
  }
  auto* tape = GradTape<T>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    typename GradTape<T>::Node node;
    node.op = "concat";
    std::vector<ImplPtr<T>> impls;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
      node.inputs.push_back(p.impl());
      impls.push_back(p.impl());
      lens.push_back(p.dim(axis));
    }
    node.output = out.impl();
    node.backward = [impls, lens, begins, sp](TensorImpl<T>& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (!wants(impls[k])) continue;
        const std::size_t chunk = lens[k] * sp.inner;
        std::vector<T> g(sp.outer * chunk);
        for (std::size_t oo = 0; oo < sp.outer; ++oo)
          std::copy_n(o.grad.begin() + static_cast<std::ptrdiff_t>(oo * sp.len * sp.inner + begins[k] * sp.inner),
                      chunk, g.begin() + static_cast<std::ptrdiff_t>(oo * chunk));
        accumulate_grad<T>(*impls[k], g);
      }
    };
    tape->record(std::move(node));
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t stop) {
  if (axis >= x.rank() || start >= stop || stop > x.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(stop) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const Split3 sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = stop - start;
  Tensor<T> out(out_shape);
  const std::size_t chunk = (stop - start) * sp.inner;
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * sp.len + start) * sp.inner), chunk,
                ov.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  auto xi = x.impl();
  record<T>("slice", out, {x}, [xi, sp, start, chunk](TensorImpl<T>& og) {
    std::vector<T> g(xi->data.size(), T(0));
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(og.grad.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  g.begin() + static_cast<std::ptrdiff_t>((o * sp.len + start) * sp.inner));
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

template <typename T>
Tensor<T> repeat_leading(const Tensor<T>& x, std::size_t count) {
  if (x.rank() == 0 || x.dim(0) != 1 || count == 0) {
    throw DimensionError("repeat_leading: expects leading extent 1, got " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = count;
  Tensor<T> out(shape);
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t c = 0; c < count; ++c)
    std::copy(xv.begin(), xv.end(), ov.begin() + static_cast<std::ptrdiff_t>(c * xv.size()));
  auto xi = x.impl();
  const std::size_t period = x.numel();
  record<T>("repeat_leading", out, {x}, [xi, period](TensorImpl<T>& o) {
    auto g = reduce_period<T>(o.grad, period);
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t r = a.rank();
  bool ok = r >= 2 && b.rank() == r;
  for (std::size_t i = 0; ok && i + 2 < r; ++i) ok = a.dim(i) == b.dim(i);
  ok = ok && a.dim(r - 1) == b.dim(r - 2);
  if (!ok) throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= a.dim(i);
  Shape shape = a.shape();
  shape[r - 1] = n;
  Tensor<T> out(shape);
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::gemm<T>({m, n, k, false, false}, av.subspan(bi * m * k, m * k), bv.subspan(bi * k * n, k * n),
                     ov.subspan(bi * m * n, m * n));
  }
  auto ai = a.impl(), bimpl = b.impl();
  record<T>("matmul", out, {a, b}, [ai, bimpl, batch, m, n, k](TensorImpl<T>& o) {
    std::span<const T> g(o.grad);
    if (wants(ai)) {
      std::vector<T> ga(batch * m * k);
      for (std::size_t q = 0; q < batch; ++q)
        kernels::gemm<T>({m, k, n, false, true}, g.subspan(q * m * n, m * n),
                         std::span<const T>(bimpl->data).subspan(q * k * n, k * n),
                         std::span<T>(ga).subspan(q * m * k, m * k));
      accumulate_grad<T>(*ai, ga);
    }
    if (wants(bimpl)) {
      std::vector<T> gb(batch * k * n);
      for (std::size_t q = 0; q < batch; ++q)
        kernels::gemm<T>({k, n, m, true, false}, std::span<const T>(ai->data).subspan(q * m * k, m * k),
                         g.subspan(q * m * n, m * n), std::span<T>(gb).subspan(q * k * n, k * n));
      accumulate_grad<T>(*bimpl, gb);
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(x.rank() - 1) != w.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const std::size_t in = w.dim(1), outd = w.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outd;
  Tensor<T> out(shape);
  auto ov = out.data();
  kernels::gemm<T>({rows, outd, in, false, true}, x.data(), w.data(), ov);
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outd; ++j) ov[r * outd + j] += bv[j];
  }
  auto xi = x.impl(), wi = w.impl();
  ImplPtr<T> bi = bias.defined() ? bias.impl() : nullptr;
  record<T>("linear", out, {x, w, bias}, [xi, wi, bi, rows, in, outd](TensorImpl<T>& o) {
    std::span<const T> g(o.grad);
    if (wants(xi)) {
      std::vector<T> gx(rows * in);
      kernels::gemm<T>({rows, in, outd, false, false}, g, wi->data, gx);
      accumulate_grad<T>(*xi, gx);
    }
    if (wants(wi)) {
      std::vector<T> gw(outd * in);
      kernels::gemm<T>({outd, in, rows, true, false}, g, xi->data, gw);
      accumulate_grad<T>(*wi, gw);
    }
    if (wants(bi)) {
      std::vector<T> gb(outd, T(0));
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
      accumulate_grad<T>(*bi, gb);
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dParams params) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " + shape_str(w.shape()) + ", bias " +
                         shape_str(bias.shape()));
  }
  if (params.stride == 0) throw DimensionError("conv2d: stride must be positive");
  kernels::Conv2dShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), params.stride,
                         params.padding};
  if (s.kernel_h > s.height + 2 * s.padding || s.kernel_w > s.width + 2 * s.padding) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " (padding " + std::to_string(params.padding) + ")");
  }
  Tensor<T> out(Shape{s.batch, s.filters, s.out_h(), s.out_w()});
  kernels::conv2d_forward<T>(s, x.data(), w.data(), bias.data(), out.data());
  auto xi = x.impl(), wi = w.impl(), bi = bias.impl();
  record<T>("conv2d", out, {x, w, bias}, [xi, wi, bi, s](TensorImpl<T>& o) {
    std::vector<T> gx(wants(xi) ? xi->data.size() : 0);
    std::vector<T> gw(wants(wi) ? wi->data.size() : 0);
    std::vector<T> gb(wants(bi) ? bi->data.size() : 0);
    kernels::conv2d_backward<T>(s, xi->data, wi->data, o.grad, gx, gw, gb);
    if (!gx.empty()) accumulate_grad<T>(*xi, gx);
    if (!gw.empty()) accumulate_grad<T>(*wi, gw);
    if (!gb.empty()) accumulate_grad<T>(*bi, gb);
  });
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw DimensionError("maxpool2d: expects NCHW, got " + shape_str(x.shape()));
  if (kernel == 0 || stride == 0 || kernel > x.dim(2) || kernel > x.dim(3)) {
    throw DimensionError("maxpool2d: window " + std::to_string(kernel) + " exceeds spatial extent of " +
                         shape_str(x.shape()));
  }
  kernels::PoolShape s{x.dim(0) * x.dim(1), x.dim(2), x.dim(3), kernel, stride};
  Tensor<T> out(Shape{x.dim(0), x.dim(1), s.out_h(), s.out_w()});
  std::vector<std::size_t> argmax(out.numel());
  kernels::maxpool2d_forward<T>(s, x.data(), out.data(), argmax);
  auto xi = x.impl();
  record<T>("maxpool2d", out, {x}, [xi, argmax = std::move(argmax)](TensorImpl<T>& o) {
    std::vector<T> g(xi->data.size(), T(0));
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out(x.shape());
  kernels::softmax_rows<T>(rows, cols, x.data(), out.data());
  auto xi = x.impl();
  record<T>("softmax", out, {x}, [xi, rows, cols](TensorImpl<T>& o) {
    std::vector<T> g(o.grad.size());
    kernels::softmax_rows_backward<T>(rows, cols, o.data, o.grad, g);
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

namespace {

// Flat index maps between image layout and patch layout; dst[i] = src[map[i]].
std::vector<std::size_t> patch_index(std::size_t n, std::size_t c, std::size_t size, std::size_t p) {
  const std::size_t g = size / p;
  const std::size_t plen = c * p * p;
  std::vector<std::size_t> map(n * c * size * size);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t py = 0; py < g; ++py)
      for (std::size_t px = 0; px < g; ++px)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
              map[o++] = ((b * c + ch) * size + py * p + dy) * size + px * p + dx;
  (void)plen;
  return map;
}

template <typename T>
Tensor<T> gather_scatter(std::string_view op, const Tensor<T>& x, Shape out_shape, std::vector<std::size_t> map,
                         bool gather) {
  Tensor<T> out(std::move(out_shape));
  auto xv = x.data();
  auto ov = out.data();
  if (gather) {
    for (std::size_t i = 0; i < map.size(); ++i) ov[i] = xv[map[i]];
  } else {
    for (std::size_t i = 0; i < map.size(); ++i) ov[map[i]] = xv[i];
  }
  auto xi = x.impl();
  record<T>(op, out, {x}, [xi, map = std::move(map), gather](TensorImpl<T>& o) {
    std::vector<T> g(o.grad.size());
    if (gather) {
      for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] = o.grad[i];
    } else {
      for (std::size_t i = 0; i < map.size(); ++i) g[i] = o.grad[map[i]];
    }
    accumulate_grad<T>(*xi, g);
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
    throw DimensionError("patchify: expects square NCHW images, got " + shape_str(images.shape()));
  }
  const std::size_t size = images.dim(2);
  if (patch == 0 || size % patch != 0) {
    throw DimensionError("patchify: image size " + std::to_string(size) + " not divisible by patch " +
                         std::to_string(patch));
  }
  const std::size_t n = images.dim(0), c = images.dim(1), g = size / patch;
  return gather_scatter<T>("patchify", images, Shape{n, g * g, c * patch * patch}, patch_index(n, c, size, patch),
                           true);
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t channels, std::size_t patch) {
  if (patches.rank() != 3 || patch == 0 || patches.dim(2) != channels * patch * patch) {
    throw DimensionError("unpatchify: bad patch tensor " + shape_str(patches.shape()));
  }
  const std::size_t n = patches.dim(0);
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches.dim(1)))));
  if (g * g != patches.dim(1)) throw DimensionError("unpatchify: patch count is not a square");
  const std::size_t size = g * patch;
  return gather_scatter<T>("unpatchify", patches, Shape{n, channels, size, size}, patch_index(n, channels, size, patch),
                           false);
}

#define SPVIT_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                     \
  template Tensor<T> exp(const Tensor<T>&);                                                          \
  template Tensor<T> tanh(const Tensor<T>&);                                                         \
  template Tensor<T> erf(const Tensor<T>&);                                                          \
  template Tensor<T> relu(const Tensor<T>&);                                                         \
  template Tensor<T> gelu(const Tensor<T>&);                                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                          \
  template Tensor<T> mean(const Tensor<T>&);                                                         \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                       \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                     \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                             \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                 \
  template Tensor<T> repeat_leading(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dParams);     \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> softmax(const Tensor<T>&);                                                      \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t);

SPVIT_INSTANTIATE_OPS(float)
SPVIT_INSTANTIATE_OPS(double)

#undef SPVIT_INSTANTIATE_OPS

}  // namespace spvit::ops
