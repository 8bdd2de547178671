#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "spvit/inventory.hpp"
#include "spvit/nn.hpp"

namespace spvit {

struct ViTConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_dim = 3072;
  double ln_eps = 1e-6;
  /// The head reads pooled features multiplied by this factor (kW per unit).
  double output_scale = 30.1;

  /// "base" (768, 12, 12, 3072) or "tiny-test" (32, 2, 4, 64 at 64 px input).
  static ViTConfig preset(std::string_view name);

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  void validate() const;
};

struct ConvStage {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t pool = 2;
};

struct SunsetConfig {
  std::size_t image_size = 64;
  std::size_t channels = 3;
  ConvStage conv1{24, 3, 2};
  ConvStage conv2{48, 3, 2};
  std::size_t fc1_width = 1024;
  double output_scale = 30.1;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// Spatial extent after both conv/pool stages.
  std::size_t final_extent() const;
  std::size_t flatten_length() const { return conv2.filters * final_extent() * final_extent(); }
  void validate() const;
};

using ModelSpec = std::variant<ViTConfig, SunsetConfig>;

/// Parameter and buffer inventory (names and shapes) in registration order.
std::vector<TensorSpec> inventory(const ModelSpec& spec);
std::string model_kind(const ModelSpec& spec);

/// A network mapping images [N x C x S x S] to kW predictions [N x 1].
template <typename T>
class Regressor {
 public:
  virtual ~Regressor() = default;

  /// Raw, unclamped predictions.
  virtual Tensor<T> forward(const Tensor<T>& images, Mode mode) = 0;
  virtual std::size_t input_size() const = 0;
  virtual ModelSpec spec() const = 0;
  /// Name prefixes of tensors a warm start may leave freshly initialized.
  virtual std::vector<std::string> head_prefixes() const = 0;

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

 protected:
  ParameterSet<T> params_;
};

template <typename T>
class ViTRegressor final : public Regressor<T> {
 public:
  ViTRegressor(const ViTConfig& config, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& images, Mode mode) override;
  std::size_t input_size() const override { return config_.image_size; }
  ModelSpec spec() const override { return config_; }
  std::vector<std::string> head_prefixes() const override { return {"pooler.", "head."}; }
  const ViTConfig& config() const { return config_; }

  /// Linear patch embedding only: [N x P x dim].
  Tensor<T> embed_patches(const Tensor<T>& images) const;
  /// Forward from already-patchified inputs [N x P x patch_dim].
  Tensor<T> forward_patches(const Tensor<T>& patches) const;
  /// tanh(pooler(final_norm(CLS))) for patchified inputs: [N x dim].
  Tensor<T> pooled_from_patches(const Tensor<T>& patches) const;

 private:
  struct Block {
    Tensor<T> norm1_gamma, norm1_beta;
    MhsaWeights<T> attn;
    Tensor<T> norm2_gamma, norm2_beta;
    Tensor<T> w1, b1, w2, b2;
  };

  ViTConfig config_;
  Tensor<T> patch_w_, patch_b_, cls_token_, pos_embed_;
  std::vector<Block> blocks_;
  Tensor<T> final_gamma_, final_beta_, pooler_w_, pooler_b_, head_w_, head_b_;
};

template <typename T>
class SunsetRegressor final : public Regressor<T> {
 public:
  SunsetRegressor(const SunsetConfig& config, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& images, Mode mode) override;
  std::size_t input_size() const override { return config_.image_size; }
  ModelSpec spec() const override { return config_; }
  std::vector<std::string> head_prefixes() const override { return {"fc2."}; }
  const SunsetConfig& config() const { return config_; }

 private:
  SunsetConfig config_;
  Tensor<T> conv1_w_, conv1_b_, bn1_gamma_, bn1_beta_;
  Tensor<T> conv2_w_, conv2_b_, bn2_gamma_, bn2_beta_;
  NormStats<T> bn1_, bn2_;
  Tensor<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

template <typename T>
std::unique_ptr<Regressor<T>> make_model(const ModelSpec& spec, std::uint64_t seed);

struct FreezePolicy {
  enum class Mode { none, head_only, custom };
  Mode mode = Mode::none;
  std::vector<std::string> patterns;  // glob patterns, custom mode only

  static FreezePolicy parse(std::string_view mode, std::vector<std::string> patterns = {});
  std::string name() const;
};

/// Sets trainable flags; returns the sorted trainable names. Throws PolicyError
/// if the policy's patterns match no parameter.
template <typename T>
std::vector<std::string> apply_freeze_policy(ParameterSet<T>& params, const FreezePolicy& policy);

struct WarmStartReport {
  std::vector<std::string> loaded;
  std::vector<std::string> initialized;  // absent from the checkpoint, kept from seed init
  std::vector<std::string> unexpected;   // in the checkpoint, unknown to the model
};

/// Copies matching tensors into the model. Shape mismatches always raise
/// LoadError; missing backbone tensors raise LoadError in strict mode.
template <typename T>
WarmStartReport warm_start(Regressor<T>& model, const NamedTensors& checkpoint, bool strict);

/// Model tensors (parameters and buffers) converted for checkpointing.
template <typename T>
NamedTensors export_tensors(const Regressor<T>& model);

}  // namespace spvit
