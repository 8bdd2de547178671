#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "spvit/tensor.hpp"

namespace spvit {

/// Append-only record of differentiable operations. Append order is a
/// topological order, so backward() simply walks the nodes in reverse.
template <typename T>
class GradTape {
 public:
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;

  struct Node {
    std::string_view op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    // Reads output->grad, accumulates into the inputs that require grad.
    std::function<void(TensorImpl<T>& out)> backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(Node node);
  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(const Tensor<T>& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// The tape recording on the calling thread, or nullptr.
  static GradTape* active() { return slot(); }

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;
  static GradTape*& slot() {
    thread_local GradTape* current = nullptr;
    return current;
  }

  std::vector<Node> nodes_;
};

/// Makes `tape` the active tape of this thread for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(GradTape<T>::slot()) { GradTape<T>::slot() = &tape; }
  ~TapeScope() { GradTape<T>::slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

/// Suspends recording on this thread (evaluation passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(GradTape<T>::active()) { set(nullptr); }
  ~NoGradScope() { set(previous_); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  static void set(GradTape<T>* tape) { GradTape<T>::slot() = tape; }
  GradTape<T>* previous_;
};

/// backward() on the thread's active tape.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace spvit
