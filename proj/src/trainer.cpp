#include "spvit/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "spvit/tape.hpp"

namespace spvit {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite non-negative number");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (model != "vit" && model != "sunset") throw ConfigError("model must be vit or sunset, got '" + model + "'");
}

std::string LossHistory::to_csv() const {
  std::string out = "epoch,train_mse,val_mse\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.epoch, r.train_mse, r.val_mse);
    out += buf;
  }
  return out;
}

void LossHistory::write(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << to_csv();
  if (!f) throw IoError("write to " + path.string() + " failed");
}

LossHistory LossHistory::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  LossHistory h;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "epoch,train_mse,val_mse") throw ParseError(origin, n, "bad loss-history header");
      continue;
    }
    if (line.empty()) continue;
    EpochRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf%c", &r.epoch, &r.train_mse, &r.val_mse, &tail) != 3) {
      throw ParseError(origin, n, "malformed loss-history row");
    }
    if (!h.rows.empty() && r.epoch <= h.rows.back().epoch) throw ParseError(origin, n, "epochs must increase");
    h.rows.push_back(r);
  }
  return h;
}

template <typename T>
double validation_mse(Regressor<T>& model, const Dataset& data, std::size_t batch_size) {
  const auto results = evaluate(model, data, false, batch_size);
  double acc = 0.0;
  for (const auto& r : results) acc += (r.raw - r.truth) * (r.raw - r.truth);
  return acc / static_cast<double>(results.size());
}

template <typename T>
std::vector<EvalSample> evaluate(Regressor<T>& model, const Dataset& data, bool clamp, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  if (data.image_size != model.input_size()) {
    throw DataError("dataset images are " + std::to_string(data.image_size) + " px but the model expects " +
                    std::to_string(model.input_size()));
  }
  if (batch_size == 0) batch_size = 64;
  NoGradScope<T> no_grad;
  std::vector<EvalSample> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = gather_batch<T>(data, idx);
    const auto pred = model.forward(batch.images, Mode::eval);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      EvalSample s;
      const std::size_t i = idx[k];
      s.timestamp = data.timestamps[i];
      s.day_id = data.day_ids[i];
      s.condition = data.conditions[i];
      s.truth = data.targets[i];
      s.raw = static_cast<double>(pred.data()[k]);
      s.pred = clamp ? std::max(0.0, s.raw) : s.raw;
      out.push_back(std::move(s));
    }
  }
  return out;
}

template <typename T>
TrainResult train(Regressor<T>& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_data.size() == 0) throw DataError("training split is empty");
  if (val_data.size() == 0) throw DataError("validation split is empty");
  if (train_data.image_size != model.input_size()) {
    throw DataError("training images are " + std::to_string(train_data.image_size) + " px but the model expects " +
                    std::to_string(model.input_size()));
  }
  TrainResult result;
  result.report.trainable = apply_freeze_policy(model.params(), cfg.freeze);
  AdamState<T> adam;
  adam.hyper.lr = cfg.learning_rate;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, 0x5A17);
  long step = 0;
  bool have_best = false;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double weighted = 0.0;
    for (const auto& idx : batch_indices(train_data.size(), cfg.batch_size, shuffle_seed, epoch)) {
      const auto batch = gather_batch<T>(train_data, idx);
      GradTape<T> tape;
      double loss_value;
      {
        TapeScope<T> scope(tape);
        model.params().zero_grad();
        const auto pred = model.forward(batch.images, Mode::train);
        const auto loss = mse_loss(pred, batch.targets);
        loss_value = static_cast<double>(loss.item());
        ++step;
        if (!std::isfinite(loss_value)) throw DivergenceError(epoch, step, loss_value);
        tape.backward(loss);
      }
      adam_step(model.params(), adam);
      weighted += loss_value * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = weighted / static_cast<double>(train_data.size());
    rec.val_mse = validation_mse(model, val_data, cfg.batch_size);
    if (!std::isfinite(rec.val_mse)) throw DivergenceError(epoch, step, rec.val_mse);
    result.history.rows.push_back(rec);
    if (!have_best || rec.val_mse < result.report.best_val_mse) {
      have_best = true;
      result.best = export_tensors(model);
      result.report.best_epoch = epoch;
      result.report.best_val_mse = rec.val_mse;
    }
    if (on_epoch) on_epoch(rec);
  }
  result.report.steps = step;
  result.report.final_train_mse = result.history.rows.back().train_mse;
  model.params().zero_grad();
  warm_start(model, result.best, true);
  return result;
}

template TrainResult train(Regressor<float>&, const Dataset&, const Dataset&, const TrainConfig&,
                           const EpochCallback&);
template TrainResult train(Regressor<double>&, const Dataset&, const Dataset&, const TrainConfig&,
                           const EpochCallback&);
template std::vector<EvalSample> evaluate(Regressor<float>&, const Dataset&, bool, std::size_t);
template std::vector<EvalSample> evaluate(Regressor<double>&, const Dataset&, bool, std::size_t);
template double validation_mse(Regressor<float>&, const Dataset&, std::size_t);
template double validation_mse(Regressor<double>&, const Dataset&, std::size_t);

}  // namespace spvit
