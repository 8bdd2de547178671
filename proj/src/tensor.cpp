#include "spvit/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "spvit/tape.hpp"

namespace spvit {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_extents(shape);
  impl_->data.assign(spvit::numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_extents(shape);
  if (spvit::numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (impl_->grad.empty()) return std::vector<T>(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
void Tensor<T>::assign(const Tensor& other) {
  if (other.shape() != shape()) {
    throw DimensionError("assign: " + shape_str(other.shape()) + " into " + shape_str(shape()));
  }
  std::copy(other.impl_->data.begin(), other.impl_->data.end(), impl_->data.begin());
}

template <typename T>
void accumulate_grad(TensorImpl<T>& impl, std::span<const T> values) {
  if (impl.grad.empty()) {
    impl.grad.assign(values.begin(), values.end());
    return;
  }
  for (std::size_t i = 0; i < values.size(); ++i) impl.grad[i] += values[i];
}

template <typename T>
void GradTape<T>::record(Node node) {
  nodes_.push_back(std::move(node));
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward(): loss was not produced on an active tape from trainable inputs");
  }
  auto& root = *loss.impl();
  root.grad.assign(1, T(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it->output);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  auto* tape = GradTape<T>::active();
  if (tape == nullptr) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template void accumulate_grad<float>(TensorImpl<float>&, std::span<const float>);
template void accumulate_grad<double>(TensorImpl<double>&, std::span<const double>);
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace spvit
