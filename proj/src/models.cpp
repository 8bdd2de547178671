#include "spvit/models.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <set>

#include "spvit/ops.hpp"

namespace spvit {

ViTConfig ViTConfig::preset(std::string_view name) {
  ViTConfig c;
  if (name == "base") return c;
  if (name == "tiny-test") {
    c.image_size = 64;
    c.patch_size = 16;
    c.dim = 32;
    c.depth = 2;
    c.heads = 4;
    c.mlp_dim = 64;
    return c;
  }
  throw ConfigError("unknown ViT preset '" + std::string(name) + "' (expected base or tiny-test)");
}

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (channels == 0 || depth == 0 || mlp_dim == 0) throw ConfigError("ViT extents must be positive");
  MhsaSpec{dim, heads}.validate();
  if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
}

std::size_t SunsetConfig::final_extent() const {
  std::size_t s = image_size;
  for (const auto& stage : {conv1, conv2}) {
    // conv keeps the extent ("same" padding), pool divides it
    if (stage.pool == 0 || s < stage.pool) return 0;
    s = (s - stage.pool) / stage.pool + 1;
  }
  return s;
}

void SunsetConfig::validate() const {
  for (const auto& stage : {conv1, conv2}) {
    if (stage.filters == 0 || stage.kernel == 0 || stage.kernel % 2 == 0) {
      throw ConfigError("conv stages need positive filters and an odd kernel size");
    }
  }
  if (final_extent() == 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " collapses to nothing through both pools");
  }
  if (fc1_width == 0) throw ConfigError("fc1_width must be positive");
  if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in (0, 1)");
}

namespace {

std::vector<TensorSpec> vit_inventory(const ViTConfig& c) {
  const std::size_t d = c.dim;
  std::vector<TensorSpec> out = {
      {"patch_embed.W", {d, c.patch_dim()}},
      {"patch_embed.b", {d}},
      {"cls_token", {1, 1, d}},
      {"pos_embed", {1, c.tokens(), d}},
  };
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.push_back({p + "norm1.gamma", {d}});
    out.push_back({p + "norm1.beta", {d}});
    for (const char* w : {"q", "k", "v", "o"}) {
      out.push_back({p + "attn.W" + w, {d, d}});
      out.push_back({p + "attn.b" + w, {d}});
    }
    out.push_back({p + "norm2.gamma", {d}});
    out.push_back({p + "norm2.beta", {d}});
    out.push_back({p + "mlp.W1", {c.mlp_dim, d}});
    out.push_back({p + "mlp.b1", {c.mlp_dim}});
    out.push_back({p + "mlp.W2", {d, c.mlp_dim}});
    out.push_back({p + "mlp.b2", {d}});
  }
  out.push_back({"final_norm.gamma", {d}});
  out.push_back({"final_norm.beta", {d}});
  out.push_back({"pooler.W", {d, d}});
  out.push_back({"pooler.b", {d}});
  out.push_back({"head.W", {1, d}});
  out.push_back({"head.b", {1}});
  return out;
}

std::vector<TensorSpec> sunset_inventory(const SunsetConfig& c) {
  std::vector<TensorSpec> out;
  std::size_t in = c.channels;
  int idx = 1;
  for (const auto& stage : {c.conv1, c.conv2}) {
    const std::string conv = "conv" + std::to_string(idx);
    const std::string bn = "bn" + std::to_string(idx);
    out.push_back({conv + ".W", {stage.filters, in, stage.kernel, stage.kernel}});
    out.push_back({conv + ".b", {stage.filters}});
    out.push_back({bn + ".gamma", {stage.filters}});
    out.push_back({bn + ".beta", {stage.filters}});
    out.push_back({bn + ".running_mean", {stage.filters}});
    out.push_back({bn + ".running_var", {stage.filters}});
    in = stage.filters;
    ++idx;
  }
  out.push_back({"fc1.W", {c.fc1_width, c.flatten_length()}});
  out.push_back({"fc1.b", {c.fc1_width}});
  out.push_back({"fc2.W", {1, c.fc1_width}});
  out.push_back({"fc2.b", {1}});
  return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_buffer(std::string_view name) { return ends_with(name, ".running_mean") || ends_with(name, ".running_var"); }

template <typename T>
Tensor<T> initial_value(const TensorSpec& spec, Rng& rng) {
  const std::string_view name = spec.name;
  const std::string_view leaf = name.substr(name.rfind('.') == std::string_view::npos ? 0 : name.rfind('.') + 1);
  if (leaf == "gamma" || leaf == "running_var") return Tensor<T>::ones(spec.shape);
  if (leaf == "beta" || leaf == "running_mean" || leaf.front() == 'b') return Tensor<T>::zeros(spec.shape);
  if (name.starts_with("conv")) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
    return nn::kaiming_uniform<T>(spec.shape, fan_in, rng);
  }
  return nn::trunc_normal<T>(spec.shape, 0.02, rng);
}

template <typename T>
void register_inventory(ParameterSet<T>& params, const std::vector<TensorSpec>& specs, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& s : specs) {
    auto value = initial_value<T>(s, rng);
    if (is_buffer(s.name)) {
      params.add_buffer(s.name, std::move(value));
    } else {
      params.add(s.name, std::move(value));
    }
  }
}

}  // namespace

std::vector<TensorSpec> inventory(const ModelSpec& spec) {
  return std::visit(
      [](const auto& c) {
        c.validate();
        if constexpr (std::is_same_v<std::decay_t<decltype(c)>, ViTConfig>) {
          return vit_inventory(c);
        } else {
          return sunset_inventory(c);
        }
      },
      spec);
}

std::string model_kind(const ModelSpec& spec) { return std::holds_alternative<ViTConfig>(spec) ? "vit" : "sunset"; }

template <typename T>
ViTRegressor<T>::ViTRegressor(const ViTConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  auto& ps = this->params_;
  register_inventory(ps, vit_inventory(config_), seed);
  auto get = [&](const std::string& n) { return ps.at(n).value; };
  patch_w_ = get("patch_embed.W");
  patch_b_ = get("patch_embed.b");
  cls_token_ = get("cls_token");
  pos_embed_ = get("pos_embed");
  for (std::size_t i = 0; i < config_.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    Block b;
    b.norm1_gamma = get(p + "norm1.gamma");
    b.norm1_beta = get(p + "norm1.beta");
    b.attn = {get(p + "attn.Wq"), get(p + "attn.bq"), get(p + "attn.Wk"), get(p + "attn.bk"),
              get(p + "attn.Wv"), get(p + "attn.bv"), get(p + "attn.Wo"), get(p + "attn.bo")};
    b.norm2_gamma = get(p + "norm2.gamma");
    b.norm2_beta = get(p + "norm2.beta");
    b.w1 = get(p + "mlp.W1");
    b.b1 = get(p + "mlp.b1");
    b.w2 = get(p + "mlp.W2");
    b.b2 = get(p + "mlp.b2");
    blocks_.push_back(std::move(b));
  }
  final_gamma_ = get("final_norm.gamma");
  final_beta_ = get("final_norm.beta");
  pooler_w_ = get("pooler.W");
  pooler_b_ = get("pooler.b");
  head_w_ = get("head.W");
  head_b_ = get("head.b");
}

template <typename T>
Tensor<T> ViTRegressor<T>::embed_patches(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.channels || images.dim(2) != config_.image_size ||
      images.dim(3) != config_.image_size) {
    throw DimensionError("ViT expects images [N x " + std::to_string(config_.channels) + " x " +
                         std::to_string(config_.image_size) + " x " + std::to_string(config_.image_size) +
                         "], got " + shape_str(images.shape()));
  }
  return ops::linear(ops::patchify(images, config_.patch_size), patch_w_, patch_b_);
}

template <typename T>
Tensor<T> ViTRegressor<T>::pooled_from_patches(const Tensor<T>& patches) const {
  if (patches.rank() != 3 || patches.dim(1) != config_.num_patches() || patches.dim(2) != config_.patch_dim()) {
    throw DimensionError("ViT expects patches [N x " + std::to_string(config_.num_patches()) + " x " +
                         std::to_string(config_.patch_dim()) + "], got " + shape_str(patches.shape()));
  }
  const std::size_t n = patches.dim(0);
  const T eps = static_cast<T>(config_.ln_eps);
  const MhsaSpec attn_spec{config_.dim, config_.heads};
  auto tokens = ops::linear(patches, patch_w_, patch_b_);
  auto x = ops::concat<T>({ops::repeat_leading(cls_token_, n), tokens}, 1);
  x = ops::add(x, pos_embed_);
  for (const auto& b : blocks_) {
    x = ops::add(x, nn::mhsa(nn::layer_norm(x, b.norm1_gamma, b.norm1_beta, eps), attn_spec, b.attn));
    x = ops::add(x, nn::mlp_block(nn::layer_norm(x, b.norm2_gamma, b.norm2_beta, eps), b.w1, b.b1, b.w2, b.b2));
  }
  x = nn::layer_norm(x, final_gamma_, final_beta_, eps);
  auto cls = ops::reshape(ops::slice(x, 1, 0, 1), {n, config_.dim});
  return ops::tanh(ops::linear(cls, pooler_w_, pooler_b_));
}

template <typename T>
Tensor<T> ViTRegressor<T>::forward_patches(const Tensor<T>& patches) const {
  auto pooled = pooled_from_patches(patches);
  return ops::linear(ops::scale(pooled, static_cast<T>(config_.output_scale)), head_w_, head_b_);
}

template <typename T>
Tensor<T> ViTRegressor<T>::forward(const Tensor<T>& images, Mode) {
  if (images.rank() != 4 || images.dim(1) != config_.channels || images.dim(2) != config_.image_size ||
      images.dim(3) != config_.image_size) {
    throw DimensionError("ViT expects images [N x " + std::to_string(config_.channels) + " x " +
                         std::to_string(config_.image_size) + " x " + std::to_string(config_.image_size) +
                         "], got " + shape_str(images.shape()));
  }
  return forward_patches(ops::patchify(images, config_.patch_size));
}

template <typename T>
SunsetRegressor<T>::SunsetRegressor(const SunsetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  auto& ps = this->params_;
  register_inventory(ps, sunset_inventory(config_), seed);
  auto get = [&](const std::string& n) { return ps.at(n).value; };
  conv1_w_ = get("conv1.W");
  conv1_b_ = get("conv1.b");
  bn1_gamma_ = get("bn1.gamma");
  bn1_beta_ = get("bn1.beta");
  conv2_w_ = get("conv2.W");
  conv2_b_ = get("conv2.b");
  bn2_gamma_ = get("bn2.gamma");
  bn2_beta_ = get("bn2.beta");
  bn1_ = {get("bn1.running_mean"), get("bn1.running_var"), static_cast<T>(config_.bn_momentum),
          static_cast<T>(config_.bn_eps)};
  bn2_ = {get("bn2.running_mean"), get("bn2.running_var"), static_cast<T>(config_.bn_momentum),
          static_cast<T>(config_.bn_eps)};
  fc1_w_ = get("fc1.W");
  fc1_b_ = get("fc1.b");
  fc2_w_ = get("fc2.W");
  fc2_b_ = get("fc2.b");
}

template <typename T>
Tensor<T> SunsetRegressor<T>::forward(const Tensor<T>& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != config_.channels || images.dim(2) != config_.image_size ||
      images.dim(3) != config_.image_size) {
    throw DimensionError("SUNSET expects images [N x " + std::to_string(config_.channels) + " x " +
                         std::to_string(config_.image_size) + " x " + std::to_string(config_.image_size) +
                         "], got " + shape_str(images.shape()));
  }
  auto stage = [mode](const Tensor<T>& x, const ConvStage& s, const Tensor<T>& w, const Tensor<T>& b,
                      NormStats<T>& stats, const Tensor<T>& gamma, const Tensor<T>& beta) {
    auto y = ops::conv2d(x, w, b, {1, s.kernel / 2});
    y = ops::relu(nn::batch_norm2d(y, stats, gamma, beta, mode));
    return ops::maxpool2d(y, s.pool, s.pool);
  };
  auto x = stage(images, config_.conv1, conv1_w_, conv1_b_, bn1_, bn1_gamma_, bn1_beta_);
  x = stage(x, config_.conv2, conv2_w_, conv2_b_, bn2_, bn2_gamma_, bn2_beta_);
  x = ops::reshape(x, {images.dim(0), config_.flatten_length()});
  x = ops::relu(ops::linear(x, fc1_w_, fc1_b_));
  return ops::linear(ops::scale(x, static_cast<T>(config_.output_scale)), fc2_w_, fc2_b_);
}

template <typename T>
std::unique_ptr<Regressor<T>> make_model(const ModelSpec& spec, std::uint64_t seed) {
  if (const auto* v = std::get_if<ViTConfig>(&spec)) return std::make_unique<ViTRegressor<T>>(*v, seed);
  return std::make_unique<SunsetRegressor<T>>(std::get<SunsetConfig>(spec), seed);
}

FreezePolicy FreezePolicy::parse(std::string_view mode, std::vector<std::string> patterns) {
  FreezePolicy p;
  if (mode == "none") {
    p.mode = Mode::none;
  } else if (mode == "head_only") {
    p.mode = Mode::head_only;
  } else if (mode == "custom") {
    p.mode = Mode::custom;
    if (patterns.empty()) throw PolicyError("custom freeze policy needs at least one pattern");
    p.patterns = std::move(patterns);
  } else {
    throw PolicyError("unknown freeze mode '" + std::string(mode) + "' (expected none, head_only or custom)");
  }
  return p;
}

std::string FreezePolicy::name() const {
  switch (mode) {
    case Mode::none:
      return "none";
    case Mode::head_only:
      return "head_only";
    case Mode::custom:
      return "custom";
  }
  return "none";
}

template <typename T>
std::vector<std::string> apply_freeze_policy(ParameterSet<T>& params, const FreezePolicy& policy) {
  std::vector<std::string> patterns;
  if (policy.mode == FreezePolicy::Mode::head_only) {
    patterns = {"final_norm.*", "pooler.*", "head.*"};
  } else if (policy.mode == FreezePolicy::Mode::custom) {
    patterns = policy.patterns;
  }
  std::size_t matched = 0;
  for (auto& p : params.items()) {
    if (p.buffer) continue;
    bool on = policy.mode == FreezePolicy::Mode::none;
    for (const auto& pat : patterns) on = on || fnmatch(pat.c_str(), p.name.c_str(), 0) == 0;
    matched += on ? 1 : 0;
    p.trainable = on;
    p.value.set_requires_grad(on);
  }
  if (matched == 0) {
    throw PolicyError("freeze policy '" + policy.name() + "' leaves no trainable parameter");
  }
  return params.trainable_names();
}

template <typename T>
WarmStartReport warm_start(Regressor<T>& model, const NamedTensors& checkpoint, bool strict) {
  WarmStartReport report;
  std::vector<std::string> mismatched, missing_backbone;
  const auto heads = model.head_prefixes();
  std::set<std::string> known;
  for (auto& p : model.params().items()) {
    known.insert(p.name);
    auto it = checkpoint.find(p.name);
    if (it == checkpoint.end()) {
      const bool is_head = std::any_of(heads.begin(), heads.end(),
                                       [&](const std::string& h) { return p.name.starts_with(h); });
      if (!is_head) missing_backbone.push_back(p.name);
      report.initialized.push_back(p.name);
      continue;
    }
    if (it->second.shape() != p.value.shape()) {
      mismatched.push_back(p.name + " (model " + shape_str(p.value.shape()) + ", checkpoint " +
                           shape_str(it->second.shape()) + ")");
      continue;
    }
    report.loaded.push_back(p.name);
  }
  if (!mismatched.empty()) {
    std::string msg = "warm start: shape mismatch for";
    for (const auto& m : mismatched) msg += " " + m + ";";
    throw LoadError(msg);
  }
  if (strict && !missing_backbone.empty()) {
    std::string msg = "warm start (strict): checkpoint lacks backbone tensor(s)";
    for (const auto& m : missing_backbone) msg += " " + m;
    throw LoadError(msg);
  }
  for (const auto& name : report.loaded) {
    auto& dst = model.params().at(name).value;
    const auto& src = checkpoint.at(name).values();
    auto out = dst.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src[i]);
  }
  for (const auto& [name, _] : checkpoint) {
    if (known.count(name) == 0) report.unexpected.push_back(name);
  }
  return report;
}

template <typename T>
NamedTensors export_tensors(const Regressor<T>& model) {
  NamedTensors out;
  for (const auto& p : model.params().items()) {
    std::vector<float> v(p.value.numel());
    auto src = p.value.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(src[i]);
    out.emplace(p.name, Tensor<float>(p.value.shape(), std::move(v)));
  }
  return out;
}

template class ViTRegressor<float>;
template class ViTRegressor<double>;
template class SunsetRegressor<float>;
template class SunsetRegressor<double>;
template std::unique_ptr<Regressor<float>> make_model<float>(const ModelSpec&, std::uint64_t);
template std::unique_ptr<Regressor<double>> make_model<double>(const ModelSpec&, std::uint64_t);
template std::vector<std::string> apply_freeze_policy(ParameterSet<float>&, const FreezePolicy&);
template std::vector<std::string> apply_freeze_policy(ParameterSet<double>&, const FreezePolicy&);
template WarmStartReport warm_start(Regressor<float>&, const NamedTensors&, bool);
template WarmStartReport warm_start(Regressor<double>&, const NamedTensors&, bool);
template NamedTensors export_tensors(const Regressor<float>&);
template NamedTensors export_tensors(const Regressor<double>&);

}  // namespace spvit
