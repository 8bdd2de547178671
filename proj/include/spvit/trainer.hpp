#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spvit/data.hpp"
#include "spvit/inventory.hpp"
#include "spvit/models.hpp"
#include "spvit/optim.hpp"

namespace spvit {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  int epochs = 20;
  std::uint64_t seed = 0;
  FreezePolicy freeze;
  std::string model = "vit";
  bool eval_clamp = true;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct LossHistory {
  std::vector<EpochRecord> rows;

  /// `epoch,train_mse,val_mse`, values with 9 significant digits.
  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;
  static LossHistory parse(const std::string& text, const std::string& origin = "<history>");
};

struct TrainReport {
  std::vector<std::string> trainable;  // sorted
  int best_epoch = 0;
  double best_val_mse = 0.0;
  double final_train_mse = 0.0;
  long steps = 0;
};

struct TrainResult {
  NamedTensors best;  // snapshot at the lowest validation MSE
  LossHistory history;
  TrainReport report;
};

/// Called after every epoch (progress output).
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Applies cfg.freeze, then runs cfg.epochs epochs of shuffled mini-batch
/// Adam on MSE. The model is left holding the best-validation weights.
template <typename T>
TrainResult train(Regressor<T>& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct EvalSample {
  std::string timestamp;
  std::string day_id;
  Condition condition = Condition::unlabeled;
  double truth = 0.0;
  double raw = 0.0;   // model output
  double pred = 0.0;  // raw, clamped at 0 when requested
};

/// Eval-mode forward over the dataset in order.
template <typename T>
std::vector<EvalSample> evaluate(Regressor<T>& model, const Dataset& data, bool clamp, std::size_t batch_size = 64);

/// Mean squared error of raw (unclamped) outputs.
template <typename T>
double validation_mse(Regressor<T>& model, const Dataset& data, std::size_t batch_size = 64);

}  // namespace spvit
