#pragma once

#include <map>
#include <string>
#include <vector>

#include "spvit/nn.hpp"

namespace spvit {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  long t = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// mean((pred - target)^2); shapes must match exactly.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// One bias-corrected Adam update of every trainable parameter. Frozen
/// parameters and buffers are skipped; a trainable parameter without a
/// gradient raises ContractError.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state);

}  // namespace spvit
