// spvit: command-line entry point for the nowcasting engine.
//
// Exit codes: 0 success, 2 config/usage error, 3 training divergence,
// 4 I/O or data error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "spvit/checkpoint.hpp"
#include "spvit/config.hpp"
#include "spvit/data.hpp"
#include "spvit/metrics.hpp"
#include "spvit/models.hpp"
#include "spvit/sweep.hpp"
#include "spvit/trainer.hpp"

namespace fs = std::filesystem;
using namespace spvit;

namespace {

constexpr int kOk = 0, kConfig = 2, kDiverged = 3, kData = 4;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI run config");
  cmd->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "seed for every random stream");
}

std::vector<ConfigOverride> overrides(const Common& c) {
  std::vector<ConfigOverride> out;
  for (const auto& s : c.sets) out.push_back(ConfigOverride::parse(s));
  return out;
}

RunConfig resolve_config(const Common& c, const fs::path& fallback_dir = {}) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config, overrides(c));
  } else if (!fallback_dir.empty() && fs::exists(fallback_dir / "config.ini")) {
    cfg = load_config(fallback_dir / "config.ini", overrides(c));
  } else {
    cfg = default_config(overrides(c));
  }
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write to " + path.string() + " failed");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::uint64_t init_seed(const RunConfig& cfg) { return derive_seed(cfg.train.seed, 0x1417); }

/// Model from config, weights from checkpoint; the inventory must match exactly.
std::unique_ptr<Regressor<float>> load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  const auto tensors = load_checkpoint(checkpoint);
  const auto spec = cfg.model_spec();
  const auto report = validate_inventory(tensors, spec);
  if (!report.perfect()) {
    std::string msg = checkpoint.string() + " does not match the configured " + model_kind(spec) + " model:";
    for (const auto& n : report.missing) msg += " missing " + n + ";";
    for (const auto& n : report.unexpected) msg += " unexpected " + n + ";";
    for (const auto& n : report.mismatched) msg += " " + n + ";";
    throw LoadError(msg);
  }
  auto model = make_model<float>(spec, init_seed(cfg));
  warm_start(*model, tensors, true);
  return model;
}

Manifest load(const fs::path& path, const RunConfig& cfg) {
  ManifestOptions opt;
  opt.capacity_kw = cfg.data.capacity_kw;
  return load_manifest(path, opt);
}

int cmd_synth(const Common& common, const fs::path& out) {
  const auto cfg = resolve_config(common);
  const auto d = generate_experiment_data(cfg, out);
  std::printf("wrote %zu train, %zu val, %zu test samples to %s (test days: %zu sunny, %zu cloudy)\n",
              d.train.size(), d.val.size(), d.test.size(), out.string().c_str(), d.sunny_days, d.cloudy_days);
  return kOk;
}

int cmd_train(const Common& common, const fs::path& data_dir, const fs::path& out) {
  const auto cfg = resolve_config(common);
  make_dir(out);
  const auto train_m = load(data_dir / "train.csv", cfg);
  const auto val_m = load(data_dir / "val.csv", cfg);
  auto model = make_model<float>(cfg.model_spec(), init_seed(cfg));
  if (!cfg.warm_start.empty()) {
    const auto rep = warm_start(*model, load_checkpoint(cfg.warm_start), cfg.strict_warm_start);
    std::printf("warm start: %zu loaded, %zu freshly initialized, %zu ignored\n", rep.loaded.size(),
                rep.initialized.size(), rep.unexpected.size());
  }
  const auto train_d = load_dataset(train_m, model->input_size());
  const auto val_d = load_dataset(val_m, model->input_size());
  const auto result = train(*model, train_d, val_d, cfg.train, [](const EpochRecord& r) {
    std::printf("epoch %3d  train_mse %.6f  val_mse %.6f\n", r.epoch, r.train_mse, r.val_mse);
    std::fflush(stdout);
  });
  save_checkpoint(result.best, out / "checkpoint.spvt");
  result.history.write(out / "loss_history.csv");
  write_text(out / "config.ini", to_ini(cfg));
  nlohmann::ordered_json report;
  report["model"] = cfg.model_kind;
  report["freeze"] = cfg.train.freeze.name();
  report["trainable"] = result.report.trainable;
  report["best_epoch"] = result.report.best_epoch;
  report["best_val_mse"] = result.report.best_val_mse;
  report["final_train_mse"] = result.report.final_train_mse;
  report["steps"] = result.report.steps;
  write_text(out / "report.json", report.dump(2) + "\n");
  std::printf("best epoch %d, best val MSE %.6f\n", result.report.best_epoch, result.report.best_val_mse);
  std::printf("final val MSE: %.6f\n", result.history.rows.back().val_mse);
  return kOk;
}

int cmd_evaluate(const Common& common, const fs::path& checkpoint, const fs::path& manifest, const fs::path& out) {
  const auto cfg = resolve_config(common, checkpoint.parent_path());
  make_dir(out);
  auto model = load_model(cfg, checkpoint);
  const auto data = load_dataset(load(manifest, cfg), model->input_size());
  const auto results = evaluate(*model, data, cfg.train.eval_clamp, cfg.data.eval_batch_size);
  const auto summary = rmse_by_condition(results);
  write_metrics(summary, out / "metrics.json");
  std::string preds = "timestamp,day_id,condition,truth_kw,pred_kw\n";
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.6f,%.6f\n", r.timestamp.c_str(), r.day_id.c_str(),
                  to_string(r.condition).c_str(), r.truth, r.pred);
    preds += buf;
  }
  write_text(out / "predictions.csv", preds);
  const auto days = export_series(results, out / "series");
  auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("absent"); };
  std::printf("rmse_sunny %s  rmse_cloudy %s  rmse_overall %.5f  (n_sunny %zu, n_cloudy %zu, %zu days)\n",
              show(summary.rmse_sunny).c_str(), show(summary.rmse_cloudy).c_str(), summary.rmse_overall,
              summary.n_sunny, summary.n_cloudy, days.size());
  return kOk;
}

int cmd_sweep(const Common& common, const fs::path& data_dir, const fs::path& out, std::optional<std::size_t> par,
              const std::string& warm_path) {
  auto cfg = resolve_config(common);
  if (!warm_path.empty()) cfg.warm_start = warm_path;
  make_dir(out);
  const auto spec = cfg.model_spec();
  const std::size_t size = std::visit([](const auto& c) { return c.image_size; }, spec);
  const auto train_d = load_dataset(load(data_dir / "train.csv", cfg), size);
  const auto val_d = load_dataset(load(data_dir / "val.csv", cfg), size);
  const auto test_d = load_dataset(load(data_dir / "test.csv", cfg), size);
  NamedTensors warm;
  if (!cfg.warm_start.empty()) warm = load_checkpoint(cfg.warm_start);
  const auto result = run_sweep(cfg.sweep_grid(), spec, cfg.warm_start.empty() ? nullptr : &warm,
                                {train_d, val_d, test_d}, par.value_or(cfg.sweep.parallelism), out);
  write_results_table(result.rows, out / "results.csv");
  write_text(out / "config.ini", to_ini(cfg));
  std::printf("%-3s %-13s %-6s %-11s %-11s %-12s %s\n", "", "learning_rate", "batch", "rmse_sunny", "rmse_cloudy",
              "rmse_overall", "final_val_loss");
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& r = result.rows[i];
    auto f = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); };
    std::printf("%-3s %-13g %-6zu %-11s %-11s %-12f %f\n", result.best == i ? "*" : "", r.learning_rate, r.batch_size,
                f(r.rmse_sunny).c_str(), f(r.rmse_cloudy).c_str(), r.rmse_overall, r.final_val_loss);
  }
  nlohmann::ordered_json best;
  if (result.best) {
    const auto& r = result.rows[*result.best];
    const auto id = run_id(r.learning_rate, r.batch_size);
    best["run"] = id;
    best["learning_rate"] = r.learning_rate;
    best["batch_size"] = r.batch_size;
    best["rmse_sunny"] = r.rmse_sunny ? nlohmann::json(*r.rmse_sunny) : nlohmann::json(nullptr);
    best["rmse_cloudy"] = r.rmse_cloudy ? nlohmann::json(*r.rmse_cloudy) : nlohmann::json(nullptr);
    best["rmse_overall"] = r.rmse_overall;
    best["final_val_loss"] = r.final_val_loss;
    fs::copy_file(out / "runs" / id / "checkpoint.spvt", out / "best.spvt", fs::copy_options::overwrite_existing);
    fs::copy_file(out / "config.ini", out / "best.ini", fs::copy_options::overwrite_existing);
    std::printf("best: %s (rmse_overall %.5f)\n", id.c_str(), r.rmse_overall);
  } else {
    best["run"] = nullptr;
    std::printf("best: none (every run diverged)\n");
  }
  write_text(out / "best.json", best.dump(2) + "\n");
  return kOk;
}

int cmd_features(const Common& common, const fs::path& checkpoint, const fs::path& image, const fs::path& out,
                 std::size_t channels) {
  const auto cfg = resolve_config(common, checkpoint.parent_path());
  if (cfg.model_kind != "vit") throw ConfigError("export-features needs a ViT model");
  auto model = load_model(cfg, checkpoint);
  const auto& vit = dynamic_cast<const ViTRegressor<float>&>(*model);
  const auto grid = feature_map_grid(vit, preprocess(read_png(image), vit.input_size()), channels);
  if (out.has_parent_path()) make_dir(out.parent_path());
  write_png(grid, out);
  std::printf("wrote %zux%zu feature-map grid to %s\n", grid.width, grid.height, out.string().c_str());
  return kOk;
}

int cmd_predict(const Common& common, const fs::path& checkpoint, const fs::path& image) {
  const auto cfg = resolve_config(common, checkpoint.parent_path());
  auto model = load_model(cfg, checkpoint);
  const auto x = preprocess(read_png(image), model->input_size());
  Dataset one;
  one.image_size = model->input_size();
  one.images = x.values();
  one.targets = {0.0f};
  one.conditions = {Condition::unlabeled};
  one.timestamps = {""};
  one.day_ids = {""};
  const auto r = evaluate(*model, one, cfg.train.eval_clamp, 1);
  std::printf("%.4f\n", r.front().pred);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spvit: sky-image PV nowcasting with a vision transformer and a CNN baseline"};
  app.require_subcommand(1);
  Common common;

  std::string out, data, checkpoint, manifest, image, warm;
  std::optional<std::size_t> parallelism;
  std::size_t channels = 16;

  auto* synth = app.add_subcommand("synth-data", "render a synthetic sky-image / PV dataset");
  add_common(synth, common);
  synth->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a model on train.csv / val.csv");
  add_common(trn, common);
  trn->add_option("--data", data, "directory holding train.csv and val.csv")->required();
  trn->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "RMSE summary and prediction series on a test manifest");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--test-manifest", manifest)->required();
  ev->add_option("--out", out, "output directory")->required();

  auto* sw = app.add_subcommand("sweep", "learning-rate x batch-size grid");
  add_common(sw, common);
  sw->add_option("--data", data, "directory holding train.csv, val.csv and test.csv")->required();
  sw->add_option("--out", out, "output directory")->required();
  sw->add_option("--parallelism", parallelism, "concurrent runs");
  sw->add_option("--warm-start", warm, "checkpoint every run starts from");

  auto* fx = app.add_subcommand("export-features", "patch-embedding feature-map grid as PNG");
  add_common(fx, common);
  fx->add_option("--checkpoint", checkpoint)->required();
  fx->add_option("--image", image)->required();
  fx->add_option("--out", out, "output PNG path")->required();
  fx->add_option("--channels", channels, "embedding channels to show");

  auto* pr = app.add_subcommand("predict", "print the predicted kW for one image");
  add_common(pr, common);
  pr->add_option("--checkpoint", checkpoint)->required();
  pr->add_option("--image", image)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(common, out);
    if (trn->parsed()) return cmd_train(common, data, out);
    if (ev->parsed()) return cmd_evaluate(common, checkpoint, manifest, out);
    if (sw->parsed()) return cmd_sweep(common, data, out, parallelism, warm);
    if (fx->parsed()) return cmd_features(common, checkpoint, image, out, channels);
    if (pr->parsed()) return cmd_predict(common, checkpoint, image);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kConfig;
}
