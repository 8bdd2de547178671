#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spvit/image_io.hpp"
#include "spvit/models.hpp"
#include "spvit/trainer.hpp"

namespace spvit {

/// sqrt(mean((p - t)^2)). Throws MetricError on empty or unequal inputs.
double rmse(std::span<const double> preds, std::span<const double> truths);

struct RmseSummary {
  std::optional<double> rmse_sunny;   // absent when no sunny samples
  std::optional<double> rmse_cloudy;  // absent when no cloudy samples
  double rmse_overall = 0.0;
  std::size_t n_sunny = 0;
  std::size_t n_cloudy = 0;
};

/// Uses the `pred` field. Unlabeled samples raise LabelingError.
RmseSummary rmse_by_condition(const std::vector<EvalSample>& results);

/// Object with keys rmse_sunny, rmse_cloudy, rmse_overall, n_sunny, n_cloudy;
/// RMSEs with 5 decimals, absent subsets as null.
std::string metrics_json(const RmseSummary& summary);
void write_metrics(const RmseSummary& summary, const std::filesystem::path& path);

struct SeriesPoint {
  std::string timestamp;
  double truth = 0.0;
  double pred = 0.0;
};

/// Groups by day_id, each day sorted by timestamp. Duplicate timestamps within
/// a day raise DataError.
std::map<std::string, std::vector<SeriesPoint>> group_by_day(const std::vector<EvalSample>& results);

/// `timestamp,truth_kw,pred_kw` with 6 decimals.
std::string series_csv(const std::vector<SeriesPoint>& points);
std::vector<SeriesPoint> parse_series_csv(const std::string& text, const std::string& origin = "<series>");
/// Line chart of truth and prediction; y axis spans [0, max * 1.05].
std::string series_svg(const std::string& day, const std::vector<SeriesPoint>& points);

/// Writes <day>.csv and <day>.svg per day into out_dir; returns the day ids.
std::vector<std::string> export_series(const std::vector<EvalSample>& results, const std::filesystem::path& out_dir);

/// Patch-embedding activations of the first n_channels channels, each as a
/// (S/patch)^2 grid min-max scaled to [0, 255], tiled on ceil(sqrt(n)) columns
/// with 1 px separators of value 255. `image` is [3 x S x S].
template <typename T>
Image feature_map_grid(const ViTRegressor<T>& model, const Tensor<T>& image, std::size_t n_channels = 16);

}  // namespace spvit
