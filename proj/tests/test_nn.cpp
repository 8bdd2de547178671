#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "spvit/nn.hpp"
#include "spvit/ops.hpp"

using namespace spvit;
using spvit::testing::Td;

TEST(LayerNorm, HandComputedRow) {
  auto y = nn::layer_norm(Td(Shape{3}, {1, 2, 3}), Td::ones({3}), Td::zeros({3}), 1e-12);
  const double s = std::sqrt(1.5);  // 1 / sqrt(2/3)
  EXPECT_NEAR(y[0], -s, 1e-9);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], s, 1e-9);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
}

TEST(LayerNorm, ConstantSliceGivesBeta) {
  Td beta(Shape{4}, {0.1, 0.2, 0.3, 0.4});
  auto y = nn::layer_norm(Td(Shape{2, 4}, std::vector<double>(8, 3.5)), Td::ones({4}), beta, 1e-6);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y[i], beta[i % 4]);
}

TEST(LayerNorm, PreAffineStatistics) {
  Rng rng(41);
  const std::size_t rows = 20, d = 33;
  auto x = spvit::testing::random_tensor({rows, d}, rng, -5, 5);
  auto y = nn::layer_norm(x, Td::ones({d}), Td::zeros({d}), 1e-12);
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < d; ++c) m += y[r * d + c];
    m /= d;
    for (std::size_t c = 0; c < d; ++c) v += (y[r * d + c] - m) * (y[r * d + c] - m);
    v /= d;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}

TEST(BatchNorm, EvalWithUnitStatsIsNearIdentity) {
  Rng rng(42);
  auto x = spvit::testing::random_tensor({2, 3, 4, 4}, rng);
  NormStats<double> stats{Td::zeros({3}), Td::ones({3}), 0.1, 1e-5};
  auto y = nn::batch_norm2d(x, stats, Td::ones({3}), Td::zeros({3}), Mode::eval);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] / std::sqrt(1.0 + 1e-5));
  EXPECT_EQ(stats.running_mean.values(), std::vector<double>(3, 0.0));
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  Rng rng(43);
  const std::size_t n = 4, c = 3, plane = 25;
  auto x = spvit::testing::random_tensor({n, c, 5, 5}, rng, -2, 6);
  NormStats<double> stats{Td::zeros({c}), Td::ones({c}), 0.1, 1e-12};
  auto y = nn::batch_norm2d(x, stats, Td::ones({c}), Td::zeros({c}), Mode::train);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < plane; ++i) m += y[(b * c + ch) * plane + i];
    m /= n * plane;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < plane; ++i) v += std::pow(y[(b * c + ch) * plane + i] - m, 2);
    v /= n * plane;
    EXPECT_LT(std::abs(m), 1e-9);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(BatchNorm, RunningStatsRecurrence) {
  // running <- (1 - m) * running + m * batch, variance unbiased.
  const double m = 0.1;
  NormStats<double> stats{Td::zeros({1}), Td::ones({1}), m, 1e-5};
  const std::vector<std::vector<double>> batches{{1, 2, 3, 6}, {-4, 0, 2, 10}};
  double rm = 0.0, rv = 1.0;
  for (const auto& b : batches) {
    nn::batch_norm2d(Td(Shape{2, 1, 1, 2}, b), stats, Td::ones({1}), Td::zeros({1}), Mode::train);
    double mean = 0, ss = 0;
    for (double v : b) mean += v / 4;
    for (double v : b) ss += (v - mean) * (v - mean);
    rm = (1 - m) * rm + m * mean;
    rv = (1 - m) * rv + m * ss / 3;
    EXPECT_NEAR(stats.running_mean[0], rm, 1e-14);
    EXPECT_NEAR(stats.running_var[0], rv, 1e-14);
  }
}

TEST(BatchNorm, SingletonPoolRejectedInTrainMode) {
  NormStats<double> stats{Td::zeros({2}), Td::ones({2}), 0.1, 1e-5};
  EXPECT_THROW(nn::batch_norm2d(Td::ones({1, 2, 1, 1}), stats, Td::ones({2}), Td::zeros({2}), Mode::train), DataError);
  EXPECT_NO_THROW(nn::batch_norm2d(Td::ones({1, 2, 1, 1}), stats, Td::ones({2}), Td::zeros({2}), Mode::eval));
}

namespace {

MhsaWeights<double> random_weights(std::size_t dim, Rng& rng) {
  auto w = [&] { return spvit::testing::random_tensor({dim, dim}, rng); };
  auto b = [&] { return spvit::testing::random_tensor({dim}, rng); };
  return {w(), b(), w(), b(), w(), b(), w(), b()};
}

}  // namespace

TEST(Attention, SingleTokenIsValueProjectionPath) {
  Rng rng(44);
  const std::size_t dim = 4;
  auto w = random_weights(dim, rng);
  auto x = spvit::testing::random_tensor({2, 1, dim}, rng);
  auto [y, attn] = nn::mhsa_with_weights(x, MhsaSpec{dim, 2}, w);
  for (double a : attn.values()) EXPECT_EQ(a, 1.0);
  auto expect = ops::linear(ops::linear(x, w.wv, w.bv), w.wo, w.bo);
  EXPECT_LE(spvit::testing::max_abs_diff(y.values(), expect.values()), 1e-15);
}

TEST(Attention, WeightRowsSumToOne) {
  Rng rng(45);
  auto x = spvit::testing::random_tensor({3, 7, 6}, rng, -3, 3);
  auto [y, attn] = nn::mhsa_with_weights(x, MhsaSpec{6, 3}, random_weights(6, rng));
  ASSERT_EQ(attn.shape(), (Shape{3, 3, 7, 7}));
  for (std::size_t r = 0; r < attn.numel() / 7; ++r) {
    double acc = 0;
    for (std::size_t c = 0; c < 7; ++c) acc += attn[r * 7 + c];
    EXPECT_NEAR(acc, 1.0, 1e-6);
  }
}

TEST(Attention, MatchesPerHeadLoopOracle) {
  Rng rng(46);
  const std::size_t t = 3, dim = 4, heads = 2;
  auto x = spvit::testing::random_tensor({1, t, dim}, rng);
  auto w = random_weights(dim, rng);
  spvit::testing::MhsaOracleWeights ow{w.wq.values(), w.bq.values(), w.wk.values(), w.bk.values(),
                                w.wv.values(), w.bv.values(), w.wo.values(), w.bo.values()};
  auto y = nn::mhsa(x, MhsaSpec{dim, heads}, w);
  EXPECT_LE(spvit::testing::max_abs_diff(y.values(), spvit::testing::mhsa_oracle(x.values(), 1, t, dim, heads, ow)), 1e-12);
}

TEST(Attention, RejectsIndivisibleHeads) {
  EXPECT_THROW((MhsaSpec{6, 4}).validate(), ConfigError);
  Rng rng(47);
  EXPECT_THROW(nn::mhsa(spvit::testing::random_tensor({1, 2, 5}, rng), MhsaSpec{4, 2}, random_weights(4, rng)),
               DimensionError);
}

TEST(Mlp, ZeroWeightsGiveZero) {
  Rng rng(48);
  auto y = nn::mlp_block(spvit::testing::random_tensor({2, 3, 4}, rng), Td::zeros({8, 4}), Td::zeros({8}), Td::zeros({4, 8}),
                         Td::zeros({4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Init, SameSeedIsBitwiseIdentical) {
  Rng a(7), b(7);
  EXPECT_EQ(nn::trunc_normal<float>({50, 20}, 0.02, a).values(), nn::trunc_normal<float>({50, 20}, 0.02, b).values());
  EXPECT_EQ(nn::kaiming_uniform<float>({8, 27}, 27, a).values(), nn::kaiming_uniform<float>({8, 27}, 27, b).values());
}

TEST(Init, TruncNormalSampleStd) {
  Rng rng(9);
  auto w = nn::trunc_normal<double>({100, 100}, 0.02, rng);
  double m = 0, v = 0;
  for (double x : w.values()) m += x;
  m /= w.numel();
  for (double x : w.values()) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / (w.numel() - 1));
  EXPECT_NEAR(sd, 0.02, 0.002);
  for (double x : w.values()) EXPECT_LE(std::abs(x), 0.06);
}

TEST(Init, KaimingUniformBound) {
  Rng rng(10);
  auto w = nn::kaiming_uniform<double>({16, 3, 3, 3}, 27, rng);
  const double bound = std::sqrt(6.0 / 27.0);
  double lo = 1, hi = -1;
  for (double x : w.values()) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  EXPECT_GE(lo, -bound);
  EXPECT_LE(hi, bound);
  EXPECT_LT(lo, -0.8 * bound);
  EXPECT_GT(hi, 0.8 * bound);
}

TEST(ParameterSet, NamesAreUnique) {
  ParameterSet<float> ps;
  ps.add("a.W", Tensor<float>::zeros({2}));
  EXPECT_THROW(ps.add("a.W", Tensor<float>::zeros({2})), ConfigError);
  EXPECT_THROW(ps.add_buffer("a.W", Tensor<float>::zeros({2})), ConfigError);
  ps.add_buffer("a.running_mean", Tensor<float>::zeros({2}));
  EXPECT_FALSE(ps.at("a.running_mean").trainable);
  EXPECT_EQ(ps.trainable_names(), (std::vector<std::string>{"a.W"}));
}
