#include <gtest/gtest.h>

#include <json.hpp>
#include <cmath>
#include <regex>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "spvit/metrics.hpp"

using namespace spvit;
using namespace spvit::testing;

namespace {

EvalSample sample(const std::string& ts, Condition c, double truth, double pred) {
  return {ts, ts.substr(0, 10), c, truth, pred, pred};
}

std::string polyline_points(const std::string& svg, const std::string& id) {
  std::smatch m;
  std::regex re("<polyline id=\"" + id + "\"[^>]*points=\"([^\"]*)\"");
  return std::regex_search(svg, m, re) ? m[1].str() : "<missing>";
}

}  // namespace

TEST(Rmse, HandValues) {
  std::vector<double> p{1, 2}, t{0, 0};
  EXPECT_NEAR(rmse(p, t), std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(rmse(p, t), 1.58114, 1e-5);
  EXPECT_EQ(rmse(p, p), 0.0);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), MetricError);
  EXPECT_THROW(rmse(p, std::vector<double>{1}), MetricError);
}

TEST(Rmse, HomogeneousInErrorScale) {
  Rng rng(61);
  std::vector<double> p(50), t(50), ps(50);
  for (std::size_t i = 0; i < 50; ++i) {
    t[i] = rng.uniform(0, 30);
    p[i] = t[i] + rng.uniform(-3, 3);
  }
  for (double c : {-2.5, 0.5, 4.0}) {
    for (std::size_t i = 0; i < 50; ++i) ps[i] = t[i] + c * (p[i] - t[i]);
    EXPECT_NEAR(rmse(ps, t), std::abs(c) * rmse(p, t), 1e-12);
  }
}

TEST(RmseByCondition, CompositionGivesRootFive) {
  std::vector<EvalSample> r;
  for (int i = 0; i < 5; ++i) r.push_back(sample("2024-06-01T10:0" + std::to_string(i), Condition::sunny, 5, i % 2 ? 6 : 4));
  for (int i = 0; i < 5; ++i) r.push_back(sample("2024-06-02T10:0" + std::to_string(i), Condition::cloudy, 5, i % 2 ? 8 : 2));
  auto s = rmse_by_condition(r);
  EXPECT_DOUBLE_EQ(*s.rmse_sunny, 1.0);
  EXPECT_DOUBLE_EQ(*s.rmse_cloudy, 3.0);
  EXPECT_NEAR(s.rmse_overall, std::sqrt(5.0), 1e-12);
  EXPECT_EQ(s.n_sunny, 5u);
  EXPECT_EQ(s.n_cloudy, 5u);
}

TEST(RmseByCondition, CompositionOverRandomPartitions) {
  Rng rng(62);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<EvalSample> r;
    double ss_s = 0, ss_c = 0;
    std::size_t ns = 0, nc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool sunny = i == 0 || (i != 1 && rng.index(2) == 0);
      const double t = rng.uniform(0, 30), p = t + rng.uniform(-10, 10);
      r.push_back(sample("2024-06-01T00:00", sunny ? Condition::sunny : Condition::cloudy, t, p));
      (sunny ? ss_s : ss_c) += (p - t) * (p - t);
      (sunny ? ns : nc) += 1;
    }
    auto s = rmse_by_condition(r);
    const double composed = std::sqrt((ns * *s.rmse_sunny * *s.rmse_sunny + nc * *s.rmse_cloudy * *s.rmse_cloudy) / n);
    ASSERT_NEAR(s.rmse_overall, composed, 1e-9) << trial;
    ASSERT_NEAR(s.rmse_overall, std::sqrt((ss_s + ss_c) / n), 1e-9) << trial;
  }
}

TEST(RmseByCondition, DegenerateAndPerfect) {
  std::vector<EvalSample> r{sample("2024-06-01T10:00", Condition::sunny, 3, 4),
                            sample("2024-06-01T10:12", Condition::sunny, 3, 1)};
  auto s = rmse_by_condition(r);
  EXPECT_FALSE(s.rmse_cloudy.has_value());
  EXPECT_EQ(*s.rmse_sunny, s.rmse_overall);
  EXPECT_NE(metrics_json(s).find("\"rmse_cloudy\": null"), std::string::npos);

  std::vector<EvalSample> perfect{sample("2024-06-01T10:00", Condition::sunny, 3, 3),
                                  sample("2024-06-02T10:00", Condition::cloudy, 7, 7)};
  auto z = rmse_by_condition(perfect);
  EXPECT_EQ(*z.rmse_sunny, 0.0);
  EXPECT_EQ(*z.rmse_cloudy, 0.0);
  EXPECT_EQ(z.rmse_overall, 0.0);

  r.push_back(sample("2024-06-01T10:24", Condition::unlabeled, 1, 1));
  EXPECT_THROW(rmse_by_condition(r), LabelingError);
}

TEST(MetricsJson, ExactKeySet) {
  RmseSummary s{1.234567, 2.5, 1.9, 10, 12};
  auto j = nlohmann::json::parse(metrics_json(s));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"n_cloudy", "n_sunny", "rmse_cloudy", "rmse_overall", "rmse_sunny"}));
  EXPECT_NE(metrics_json(s).find("1.23457"), std::string::npos);
  EXPECT_EQ(j["n_cloudy"], 12);
}

TEST(Series, CsvRowsAndRoundTrip) {
  std::vector<SeriesPoint> pts{{"2024-06-01T06:00", 0, 0.5}, {"2024-06-01T12:00", 30.1, 28}, {"2024-06-01T18:00", 0, 0}};
  const auto csv = series_csv(pts);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "timestamp,truth_kw,pred_kw");
  auto back = parse_series_csv(csv);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].truth, 30.1);
  EXPECT_EQ(back[1].pred, 28.0);
}

TEST(Series, SvgPolylinesAndExtent) {
  std::vector<SeriesPoint> same{{"2024-06-01T06:00", 0, 0}, {"2024-06-01T12:00", 20, 20}, {"2024-06-01T18:00", 1, 1}};
  auto svg = series_svg("2024-06-01", same);
  EXPECT_EQ(polyline_points(svg, "truth"), polyline_points(svg, "prediction"));
  EXPECT_NE(polyline_points(svg, "truth"), "<missing>");
  EXPECT_NE(svg.find("data-y-min=\"0\""), std::string::npos);
  EXPECT_NE(svg.find("data-y-max=\"21.000000\""), std::string::npos);

  std::vector<SeriesPoint> diff{{"2024-06-01T06:00", 0, 0}, {"2024-06-01T12:00", 20, 25}};
  auto svg2 = series_svg("2024-06-01", diff);
  EXPECT_NE(svg2.find("data-y-max=\"26.250000\""), std::string::npos);
  EXPECT_NE(polyline_points(svg2, "truth"), polyline_points(svg2, "prediction"));
}

TEST(Series, GroupingAndExport) {
  std::vector<EvalSample> r{sample("2024-06-02T12:00", Condition::cloudy, 1, 2), sample("2024-06-01T12:00", Condition::sunny, 1, 1),
                            sample("2024-06-01T06:00", Condition::sunny, 0, 0)};
  auto days = group_by_day(r);
  ASSERT_EQ(days.size(), 2u);
  EXPECT_EQ(days["2024-06-01"][0].timestamp, "2024-06-01T06:00");
  TempDir dir("series");
  auto ids = export_series(r, dir.path());
  EXPECT_EQ(ids, (std::vector<std::string>{"2024-06-01", "2024-06-02"}));
  EXPECT_TRUE(std::filesystem::exists(dir / "2024-06-02.svg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "2024-06-01.csv"));
  r.push_back(sample("2024-06-01T06:00", Condition::sunny, 0, 0));
  EXPECT_THROW(group_by_day(r), DataError);
}

namespace {

ViTConfig feature_vit() {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.dim = 20;
  c.depth = 1;
  c.heads = 2;
  c.mlp_dim = 8;
  return c;
}

}  // namespace

TEST(FeatureMaps, TilingDimensions) {
  ViTRegressor<float> m(feature_vit(), 1);
  Tensor<float> img(Shape{3, 32, 32}, 0.25f);
  auto grid = feature_map_grid(m, img, 16);
  EXPECT_EQ(grid.width, 4u * 4 + 3);
  EXPECT_EQ(grid.height, 4u * 4 + 3);
  auto five = feature_map_grid(m, img, 5);  // 3 columns, 2 rows
  EXPECT_EQ(five.width, 3u * 4 + 2);
  EXPECT_EQ(five.height, 2u * 4 + 1);
  EXPECT_THROW(feature_map_grid(m, img, 21), ConfigError);
  EXPECT_THROW(feature_map_grid(m, img, 0), ConfigError);
}

TEST(FeatureMaps, ConstantImageGivesZeroMaps) {
  ViTRegressor<float> m(feature_vit(), 1);
  auto grid = feature_map_grid(m, Tensor<float>(Shape{3, 32, 32}, -0.5f), 4);
  for (std::size_t y = 0; y < grid.height; ++y)
    for (std::size_t x = 0; x < grid.width; ++x) {
      const bool separator = x % 5 == 4 || y % 5 == 4;
      EXPECT_EQ(grid.at(y, x, 0), separator ? 255 : 0) << x << "," << y;
    }
}

TEST(FeatureMaps, SunnyAndCloudyImagesDiffer) {
  SynthConfig cfg;
  cfg.image_size = 32;
  auto sunny = render_sky(make_day_scene(cfg, 0.0, 1), 0.5);
  auto cloudy = render_sky(make_day_scene(cfg, 1.0, 1), 0.5);
  ViTRegressor<float> m(feature_vit(), 1);
  auto a = feature_map_grid(m, preprocess(sunny, 32), 16);
  auto b = feature_map_grid(m, preprocess(cloudy, 32), 16);
  EXPECT_NE(a.pixels, b.pixels);
}
