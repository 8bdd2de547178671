#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spvit/data.hpp"
#include "spvit/models.hpp"
#include "spvit/sweep.hpp"
#include "spvit/trainer.hpp"

namespace spvit {

struct DataSettings {
  double train_fraction = 0.95;
  double capacity_kw = 30.1;
  std::size_t eval_batch_size = 64;
};

struct SweepSettings {
  std::vector<double> learning_rates{1e-6, 5e-6, 1e-5, 5e-5, 1e-4};
  std::vector<std::size_t> batch_sizes{10, 64};
  FreezePolicy freeze{FreezePolicy::Mode::head_only, {}};
  int epochs = 0;  // 0: use [train] epochs
  std::size_t parallelism = 1;
};

struct SynthSettings {
  SynthConfig base;  // shared rendering and label parameters
  std::size_t train_days = 30;
  std::size_t test_sunny_days = 4;
  std::size_t test_cloudy_days = 4;
  double cloudy_min = 0.8;  // cloud fraction range of the cloudy test days
  double cloudy_max = 1.0;
};

/// Everything a CLI command needs, read from INI sections [model], [train],
/// [data], [sweep], [synth].
struct RunConfig {
  std::string model_kind = "vit";
  ViTConfig vit;
  SunsetConfig sunset;
  TrainConfig train;
  std::string warm_start;  // checkpoint path, empty for none
  bool strict_warm_start = false;
  DataSettings data;
  SweepSettings sweep;
  SynthSettings synth;

  ModelSpec model_spec() const;
  SweepGrid sweep_grid() const;
  void set_seed(std::uint64_t seed);
  void validate() const;
};

/// `section.key=value` as given to --set.
struct ConfigOverride {
  std::string section, key, value;
  static ConfigOverride parse(const std::string& text);
};

RunConfig parse_config(const std::string& text, const std::string& origin,
                       const std::vector<ConfigOverride>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides = {});
/// Defaults plus overrides, for commands run without --config.
RunConfig default_config(const std::vector<ConfigOverride>& overrides = {});

/// Synthetic experiment layout under out_dir: pool.csv (training days), its
/// shuffled split into train.csv / val.csv, and test.csv holding the sunny
/// test days followed by the cloudy ones.
struct ExperimentData {
  Manifest train, val, test;
  std::size_t sunny_days = 0, cloudy_days = 0;
};
ExperimentData generate_experiment_data(const RunConfig& config, const std::filesystem::path& out_dir);

/// Complete INI rendering; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

}  // namespace spvit
