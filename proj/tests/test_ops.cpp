#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "spvit/ops.hpp"
#include "spvit/tape.hpp"

using namespace spvit;
using spvit::testing::Td;

namespace {

Td mat(std::size_t r, std::size_t c, std::vector<double> v) { return Td(Shape{r, c}, std::move(v)); }

}  // namespace

TEST(Matmul, IdentityLeavesInputUnchanged) {
  auto out = ops::matmul(mat(2, 2, {1, 0, 0, 1}), mat(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(out.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, AnnihilatingPairGivesZero) {
  auto out = ops::matmul(mat(2, 2, {1, 0, 0, 0}), mat(2, 2, {0, 0, 0, 1}));
  EXPECT_EQ(out.values(), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Matmul, MatchesTripleLoopExactly) {
  Rng rng(3);
  Td a = spvit::testing::random_tensor({3, 4}, rng), b = spvit::testing::random_tensor({4, 2}, rng);
  EXPECT_EQ(ops::matmul(a, b).values(), spvit::testing::matmul_oracle(a.values(), b.values(), 3, 4, 2));
}

TEST(Matmul, RejectsInnerMismatch) {
  EXPECT_THROW(ops::matmul(Td::zeros({2, 3}), Td::zeros({2, 3})), DimensionError);
  EXPECT_THROW(ops::matmul(Td::zeros({2, 2, 3}), Td::zeros({3, 3, 2})), DimensionError);
}

TEST(Conv2d, AllOnesCountsWindow) {
  auto y = ops::conv2d(Td::ones({1, 1, 3, 3}), Td::ones({1, 1, 2, 2}), Td::zeros({1}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2d, ZeroKernelZeroBiasGivesZero) {
  Rng rng(4);
  auto y = ops::conv2d(spvit::testing::random_tensor({2, 3, 5, 5}, rng), Td::zeros({2, 3, 3, 3}), Td::zeros({2}), {1, 1});
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, MatchesDirectSummation) {
  Rng rng(5);
  Td x = spvit::testing::random_tensor({2, 3, 8, 8}, rng), w = spvit::testing::random_tensor({4, 3, 3, 3}, rng),
     b = spvit::testing::random_tensor({4}, rng);
  auto y = ops::conv2d(x, w, b);
  auto expect = spvit::testing::conv2d_oracle(x.values(), w.values(), b.values(), 2, 3, 8, 8, 4, 3, 3, 1, 0);
  EXPECT_LE(spvit::testing::max_abs_diff(y.values(), expect), 1e-12);
}

TEST(Conv2d, RejectsOversizedKernel) {
  EXPECT_THROW(ops::conv2d(Td::zeros({1, 1, 2, 2}), Td::zeros({1, 1, 3, 3}), Td::zeros({1})), DimensionError);
  EXPECT_THROW(ops::conv2d(Td::zeros({1, 2, 4, 4}), Td::zeros({1, 1, 3, 3}), Td::zeros({1})), DimensionError);
}

TEST(Maxpool, PicksWindowMaximum) {
  auto y = ops::maxpool2d(Td(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  EXPECT_EQ(y.values(), (std::vector<double>{4}));
}

TEST(Maxpool, TiesRouteGradientToFirstElement) {
  GradTape<double> tape;
  TapeScope<double> scope(tape);
  Td x(Shape{1, 1, 4, 4}, std::vector<double>(16, 7.0), true);
  auto y = ops::maxpool2d(x, 2, 2);
  for (double v : y.values()) EXPECT_EQ(v, 7.0);
  backward(ops::sum(y));
  auto g = x.grad();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g[i * 4 + j], (i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0);
}

TEST(Maxpool, MatchesWindowScan) {
  Rng rng(6);
  Td x = spvit::testing::random_tensor({1, 1, 6, 6}, rng);
  EXPECT_EQ(ops::maxpool2d(x, 2, 2).values(), spvit::testing::maxpool_oracle(x.values(), 1, 6, 6, 2, 2));
}

TEST(Softmax, SymmetricPairIsHalf) {
  auto y = ops::softmax(Td(Shape{2}, {0, 0}));
  EXPECT_EQ(y.values(), (std::vector<double>{0.5, 0.5}));
}

TEST(Softmax, LogThree) {
  auto y = ops::softmax(Td(Shape{2}, {0, std::log(3.0)}));
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(7);
  Td x = spvit::testing::random_tensor({3, 5}, rng, -3, 3);
  Td shifted = ops::add(x, Td(Shape{1}, {41.5}));
  EXPECT_LE(spvit::testing::max_abs_diff(ops::softmax(x).values(), ops::softmax(shifted).values()), 1e-15);
}

TEST(Elementwise, ReluAndMean) {
  auto r = ops::relu(Td(Shape{2}, {-1, 2}));
  EXPECT_EQ(r.values(), (std::vector<double>{0, 2}));
  EXPECT_EQ(ops::mean(Td(Shape{3}, {1, 2, 3})).item(), 2.0);
}

TEST(Elementwise, TanhSlopeAtZeroIsOne) {
  GradTape<double> tape;
  TapeScope<double> scope(tape);
  Td x(Shape{1}, {0.0}, true);
  backward(ops::sum(ops::tanh(x)));
  const double h = 1e-5;
  const double fd = (std::tanh(h) - std::tanh(-h)) / (2 * h);
  EXPECT_NEAR(x.grad()[0], 1.0, 1e-15);
  EXPECT_NEAR(fd, 1.0, 1e-9);
}

TEST(Elementwise, GeluValues) {
  auto y = ops::gelu(Td(Shape{3}, {0.0, 1.0, 12.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))), 1e-15);
  EXPECT_NEAR(y[1], 0.8413, 1e-4);
  EXPECT_NEAR(y[2], 12.0, 1e-12);
}

TEST(Broadcast, TrailingSuffixRepeats) {
  auto y = ops::add(Td(Shape{2, 3}, {0, 0, 0, 1, 1, 1}), Td(Shape{1, 3}, {1, 2, 3}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2, 3, 2, 3, 4}));
  EXPECT_THROW(ops::add(Td::zeros({2, 3}), Td::zeros({2})), DimensionError);
  EXPECT_THROW(ops::mul(Td::zeros({3}), Td::zeros({2, 3})), DimensionError);
}

TEST(Linear, IdentityWeightAndZeroBias) {
  Rng rng(8);
  Td x = spvit::testing::random_tensor({4, 3}, rng);
  auto y = ops::linear(x, mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Td::zeros({3}));
  EXPECT_EQ(y.values(), x.values());
}

TEST(Linear, ZeroInputGivesBias) {
  Td b(Shape{2}, {0.5, -1.5});
  auto y = ops::linear(Td::zeros({3, 4}), Td::ones({2, 4}), b);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y[r * 2], 0.5);
    EXPECT_EQ(y[r * 2 + 1], -1.5);
  }
}

TEST(Linear, EqualsMatmulPlusBias) {
  Rng rng(9);
  Td x = spvit::testing::random_tensor({5, 4}, rng), w = spvit::testing::random_tensor({3, 4}, rng), b = spvit::testing::random_tensor({3}, rng);
  auto composed = ops::add(ops::matmul(x, ops::transpose(w, 0, 1)), b);
  EXPECT_EQ(ops::linear(x, w, b).values(), composed.values());
}

TEST(Patchify, SmallImageArithmetic) {
  auto p = ops::patchify(Td::zeros({1, 3, 32, 32}), 16);
  EXPECT_EQ(p.shape(), (Shape{1, 4, 768}));
}

TEST(Patchify, BaseResolutionGives196Patches) {
  auto p = ops::patchify(Tensor<float>::zeros({1, 3, 224, 224}), 16);
  EXPECT_EQ(p.shape(), (Shape{1, 196, 768}));
}

TEST(Patchify, LayoutIsRowMajorChannelMajor) {
  // 1 x 2 x 4 x 4 image, patch 2: patch 1 is the top-right block.
  std::vector<double> v(32);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto p = ops::patchify(Td(Shape{1, 2, 4, 4}, v), 2);
  ASSERT_EQ(p.shape(), (Shape{1, 4, 8}));
  const std::vector<double> expect{2, 3, 6, 7, 18, 19, 22, 23};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(p[8 + i], expect[i]);
}

TEST(Patchify, RoundTripIsBitwise) {
  Rng rng(10);
  Td x = spvit::testing::random_tensor({2, 3, 12, 12}, rng);
  EXPECT_EQ(ops::unpatchify(ops::patchify(x, 4), 3, 4).values(), x.values());
  EXPECT_THROW(ops::patchify(x, 5), DimensionError);
}

TEST(Shapes, ReshapePermuteConcatSlice) {
  Td x(Shape{2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_THROW(ops::reshape(x, {4}), DimensionError);
  EXPECT_EQ(ops::transpose(x, 0, 1).values(), (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(ops::concat<double>({x, x}, 1).shape(), (Shape{2, 6}));
  EXPECT_EQ(ops::slice(x, 1, 1, 3).values(), (std::vector<double>{1, 2, 4, 5}));
  EXPECT_EQ(ops::sum(x, 0).values(), (std::vector<double>{3, 5, 7}));
  EXPECT_EQ(ops::mean(x, 1, true).shape(), (Shape{2, 1}));
  EXPECT_EQ(ops::repeat_leading(Td(Shape{1, 2}, {1, 2}), 3).values(), (std::vector<double>{1, 2, 1, 2, 1, 2}));
}
