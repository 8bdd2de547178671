#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "spvit/ops.hpp"
#include "spvit/random.hpp"
#include "spvit/tensor.hpp"

namespace spvit {

/// Named tensor owned by a model. Buffers (batch-norm running statistics) are
/// persisted with the model but are never trainable.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
  bool buffer = false;
};

/// Flat, insertion-ordered collection of a model's parameters and buffers.
template <typename T>
class ParameterSet {
 public:
  /// Registers a tensor; returns the shared handle the model keeps for its forward pass.
  Tensor<T> add(std::string name, Tensor<T> value, bool trainable = true);
  Tensor<T> add_buffer(std::string name, Tensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Parameter<T>& at(const std::string& name) const;
  Parameter<T>& at(const std::string& name);
  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  void set_trainable(const std::string& name, bool on);
  /// Sorted names of parameters currently marked trainable.
  std::vector<std::string> trainable_names() const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct NormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);  // weight of the newest batch in the running average
  T eps = T(1e-5);
};

struct MhsaSpec {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t head_dim() const { return dim / heads; }
  /// Throws ConfigError unless dim is divisible by heads.
  void validate() const;
};

template <typename T>
struct MhsaWeights {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

enum class Mode { train, eval };

namespace nn {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::linear(x, w, b);
}

/// Normalizes each last-axis slice with its population variance, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Per-channel normalization over (N, H, W). Train mode uses batch statistics
/// and updates `stats`; eval mode reads the running statistics only.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, NormStats<T>& stats, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Mode mode);

/// Multi-head self-attention over x [N x T x dim].
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const MhsaSpec& spec, const MhsaWeights<T>& w);

/// Same as mhsa(), also returning the attention weights [N x heads x T x T].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mhsa_with_weights(const Tensor<T>& x, const MhsaSpec& spec, const MhsaWeights<T>& w);

/// linear -> GELU -> linear
template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                    const Tensor<T>& b2);

// Initializers.
template <typename T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng);
/// He-uniform: U(-b, b), b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace nn

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace spvit
