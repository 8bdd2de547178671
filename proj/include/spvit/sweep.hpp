#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spvit/data.hpp"
#include "spvit/inventory.hpp"
#include "spvit/models.hpp"
#include "spvit/trainer.hpp"

namespace spvit {

struct SweepGrid {
  std::vector<double> learning_rates{1e-6, 5e-6, 1e-5, 5e-5, 1e-4};
  std::vector<std::size_t> batch_sizes{10, 64};
  TrainConfig base;  // every field but learning_rate and batch_size

  SweepGrid() { base.freeze.mode = FreezePolicy::Mode::head_only; }
  void validate() const;
};

struct SweepRow {
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  std::optional<double> rmse_sunny;
  std::optional<double> rmse_cloudy;
  double rmse_overall = 0.0;    // NaN for a diverged run
  double final_val_loss = 0.0;  // NaN for a diverged run

  bool diverged() const { return !std::isfinite(rmse_overall) || !std::isfinite(final_val_loss); }
  bool operator==(const SweepRow&) const;
};

struct SweepData {
  const Dataset& train;
  const Dataset& val;
  const Dataset& test;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by (batch_size, learning_rate)
  std::optional<std::size_t> best;
};

/// `runs/<lr>_<batch>` directory name, e.g. "1e-05_10".
std::string run_id(double learning_rate, std::size_t batch_size);

/// Lowest rmse_overall; ties go to lower final_val_loss, then lower learning
/// rate (then smaller batch). Diverged rows never win.
std::optional<std::size_t> select_best(const std::vector<SweepRow>& rows);

/// Trains and evaluates every grid point. Each run starts from a fresh model
/// (seeded from base.seed, then warm-started from `warm` when given) and fresh
/// Adam state. With a non-empty out_dir, per-run loss history, metrics and
/// checkpoint go to out_dir/runs/<id>/.
SweepResult run_sweep(const SweepGrid& grid, const ModelSpec& spec, const NamedTensors* warm, const SweepData& data,
                      std::size_t parallelism, const std::filesystem::path& out_dir = {});

/// Header `learning_rate,batch_size,rmse_sunny,rmse_cloudy,rmse_overall,final_val_loss`.
/// Numbers use the shortest round-trip form; absent subsets are empty fields.
std::string format_results_table(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_results_table(const std::string& text, const std::string& origin = "<results>");
void write_results_table(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace spvit
