#include "spvit/optim.hpp"

#include <cmath>

#include "spvit/ops.hpp"

namespace spvit {

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const auto d = ops::sub(pred, target);
  return ops::mean(ops::mul(d, d));
}

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  for (const auto& p : params.items()) {
    if (p.trainable && !p.buffer && !p.value.has_grad()) {
      throw ContractError("adam_step: trainable parameter '" + p.name + "' has no gradient");
    }
  }
  state.t += 1;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (auto& p : params.items()) {
    if (!p.trainable || p.buffer) continue;
    auto theta = p.value.data();
    auto g = p.value.mutable_grad();
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.empty()) {
      m.assign(theta.size(), T(0));
      v.assign(theta.size(), T(0));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = h.lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
      theta[i] = static_cast<T>(theta[i] - step);
    }
  }
}

template Tensor<float> mse_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mse_loss(const Tensor<double>&, const Tensor<double>&);
template void adam_step(ParameterSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, AdamState<double>&);

}  // namespace spvit
