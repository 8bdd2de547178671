#pragma once

#include <map>
#include <string>
#include <vector>

#include "spvit/tensor.hpp"

namespace spvit {

/// Name and shape of one tensor a model expects.
struct TensorSpec {
  std::string name;
  Shape shape;
  bool operator==(const TensorSpec&) const = default;
};

/// Tensors as read from a checkpoint, keyed (and therefore sorted) by name.
using NamedTensors = std::map<std::string, Tensor<float>>;

}  // namespace spvit
