#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spvit/errors.hpp"

namespace spvit {

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
};

/// Dense row-major n-d array. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  static constexpr DType dtype = dtype_of<T>();

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const;
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient after backward(); all zeros if nothing reached this tensor.
  std::vector<T> grad() const;
  std::span<T> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy of values, detached from any graph.
  Tensor clone() const;
  /// Copy values into this tensor in place; shapes must match.
  void assign(const Tensor& other);

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Adds `values` into the gradient buffer of `impl`, allocating it on first use.
template <typename T>
void accumulate_grad(TensorImpl<T>& impl, std::span<const T> values);

}  // namespace spvit
