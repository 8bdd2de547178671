#include "spvit/nn.hpp"

#include <algorithm>
#include <cmath>

#include "spvit/kernels.hpp"
#include "spvit/tape.hpp"

namespace spvit {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Tensor<T> value, bool trainable) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  index_.emplace(name, items_.size());
  items_.push_back(Parameter<T>{std::move(name), value, trainable, false});
  return value;
}

template <typename T>
Tensor<T> ParameterSet<T>::add_buffer(std::string name, Tensor<T> value) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(false);
  index_.emplace(name, items_.size());
  items_.push_back(Parameter<T>{std::move(name), value, false, true});
  return value;
}

template <typename T>
const Parameter<T>& ParameterSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second];
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second];
}

template <typename T>
void ParameterSet<T>::set_trainable(const std::string& name, bool on) {
  auto& p = at(name);
  if (p.buffer && on) throw PolicyError("buffer '" + name + "' cannot be made trainable");
  p.trainable = on;
  p.value.set_requires_grad(on);
}

template <typename T>
std::vector<std::string> ParameterSet<T>::trainable_names() const {
  std::vector<std::string> names;
  for (const auto& p : items_) {
    if (p.trainable) names.push_back(p.name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

void MhsaSpec::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

namespace nn {

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()));
  }
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel()), inv_std(rows);
  kernels::layer_norm_rows<T>(rows, d, eps, x.data(), gamma.data(), beta.data(), out.data(), xhat, inv_std);

  auto* tape = GradTape<T>::active();
  if (tape != nullptr && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    typename GradTape<T>::Node node;
    node.op = "layer_norm";
    node.inputs = {xi, gi, bi};
    node.output = out.impl();
    node.backward = [xi, gi, bi, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl<T>& o) {
      const auto& g = o.grad;
      if (gi->requires_grad || bi->requires_grad) {
        std::vector<T> dg(d, T(0)), db(d, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            dg[j] += g[r * d + j] * xhat[r * d + j];
            db[j] += g[r * d + j];
          }
        if (gi->requires_grad) accumulate_grad<T>(*gi, dg);
        if (bi->requires_grad) accumulate_grad<T>(*bi, db);
      }
      if (xi->requires_grad) {
        std::vector<T> dx(rows * d);
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_dh = 0, sum_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gi->data[j];
            sum_dh += dh;
            sum_dh_h += dh * xhat[r * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gi->data[j];
            dx[r * d + j] = inv_std[r] * inv_d * (static_cast<T>(d) * dh - sum_dh - xhat[r * d + j] * sum_dh_h);
          }
        }
        accumulate_grad<T>(*xi, dx);
      }
    };
    tape->record(std::move(node));
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, NormStats<T>& stats, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Mode mode) {
  if (x.rank() != 4) throw DimensionError("batch_norm2d: expects NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c || stats.running_var.numel() != c) {
    throw DimensionError("batch_norm2d: channel count mismatch for input " + shape_str(x.shape()));
  }
  const std::size_t count = n * plane;
  if (mode == Mode::train && count < 2) {
    throw DataError("batch_norm2d: degenerate batch, " + std::to_string(count) +
                    " value(s) per channel in train mode");
  }
  auto xv = x.data();
  auto gv = gamma.data(), bv = beta.data();
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) acc += xv[(b * c + ch) * plane + p];
      const T m = acc / static_cast<T>(count);
      T sq = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const T dlt = xv[(b * c + ch) * plane + p] - m;
          sq += dlt * dlt;
        }
      const T var = sq / static_cast<T>(count);
      mean[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(var + stats.eps);
      const T unbiased = sq / static_cast<T>(count - 1);
      auto rm = stats.running_mean.data();
      auto rv = stats.running_var.data();
      rm[ch] = (T(1) - stats.momentum) * rm[ch] + stats.momentum * m;
      rv[ch] = (T(1) - stats.momentum) * rv[ch] + stats.momentum * unbiased;
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = T(1) / std::sqrt(rv[ch] + stats.eps);
    }
  }
  Tensor<T> out(x.shape());
  auto ov = out.data();
  std::vector<T> xhat(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * c + ch) * plane + p;
        xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
        ov[i] = xhat[i] * gv[ch] + bv[ch];
      }

  auto* tape = GradTape<T>::active();
  if (tape != nullptr && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    typename GradTape<T>::Node node;
    node.op = "batch_norm2d";
    node.inputs = {xi, gi, bi};
    node.output = out.impl();
    const bool train = mode == Mode::train;
    node.backward = [xi, gi, bi, n, c, plane, count, train, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](TensorImpl<T>& o) {
      const auto& g = o.grad;
      std::vector<T> dg(c, T(0)), db(c, T(0)), sum_dh(c, T(0)), sum_dh_h(c, T(0));
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = (b * c + ch) * plane + p;
            dg[ch] += g[i] * xhat[i];
            db[ch] += g[i];
            const T dh = g[i] * gi->data[ch];
            sum_dh[ch] += dh;
            sum_dh_h[ch] += dh * xhat[i];
          }
      if (gi->requires_grad) accumulate_grad<T>(*gi, dg);
      if (bi->requires_grad) accumulate_grad<T>(*bi, db);
      if (!xi->requires_grad) return;
      std::vector<T> dx(g.size());
      const T m = static_cast<T>(count);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = (b * c + ch) * plane + p;
            const T dh = g[i] * gi->data[ch];
            dx[i] = train ? inv_std[ch] / m * (m * dh - sum_dh[ch] - xhat[i] * sum_dh_h[ch]) : dh * inv_std[ch];
          }
      accumulate_grad<T>(*xi, dx);
    };
    tape->record(std::move(node));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mhsa_with_weights(const Tensor<T>& x, const MhsaSpec& spec,
                                                  const MhsaWeights<T>& w) {
  spec.validate();
  if (x.rank() != 3 || x.dim(2) != spec.dim) {
    throw DimensionError("mhsa: input " + shape_str(x.shape()) + " for width " + std::to_string(spec.dim));
  }
  const std::size_t n = x.dim(0), t = x.dim(1), h = spec.heads, hd = spec.head_dim();
  auto heads_first = [&](const Tensor<T>& proj) { return ops::permute(ops::reshape(proj, {n, t, h, hd}), {0, 2, 1, 3}); };
  auto q = heads_first(ops::linear(x, w.wq, w.bq));
  auto k_t = ops::permute(ops::reshape(ops::linear(x, w.wk, w.bk), {n, t, h, hd}), {0, 2, 3, 1});
  auto v = heads_first(ops::linear(x, w.wv, w.bv));
  auto scores = ops::scale(ops::matmul(q, k_t), T(1) / std::sqrt(static_cast<T>(hd)));
  auto attn = ops::softmax(scores);
  auto ctx = ops::reshape(ops::permute(ops::matmul(attn, v), {0, 2, 1, 3}), {n, t, spec.dim});
  return {ops::linear(ctx, w.wo, w.bo), attn};
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const MhsaSpec& spec, const MhsaWeights<T>& w) {
  return mhsa_with_weights(x, spec, w).first;
}

template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                    const Tensor<T>& b2) {
  return ops::linear(ops::gelu(ops::linear(x, w1, b1)), w2, b2);
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) {
    double z = rng.normal();
    while (std::abs(z) > 3.0) z = rng.normal();
    v = static_cast<T>(z * std);
  }
  return out;
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

#define SPVIT_INSTANTIATE_NN(T)                                                                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                           \
  template Tensor<T> batch_norm2d(const Tensor<T>&, NormStats<T>&, const Tensor<T>&, const Tensor<T>&, Mode);       \
  template Tensor<T> mhsa(const Tensor<T>&, const MhsaSpec&, const MhsaWeights<T>&);                                \
  template std::pair<Tensor<T>, Tensor<T>> mhsa_with_weights(const Tensor<T>&, const MhsaSpec&,                     \
                                                             const MhsaWeights<T>&);                                \
  template Tensor<T> mlp_block(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                               const Tensor<T>&);                                                                   \
  template Tensor<T> trunc_normal<T>(Shape, double, Rng&);                                                          \
  template Tensor<T> kaiming_uniform<T>(Shape, std::size_t, Rng&);

SPVIT_INSTANTIATE_NN(float)
SPVIT_INSTANTIATE_NN(double)

#undef SPVIT_INSTANTIATE_NN

}  // namespace nn

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace spvit
