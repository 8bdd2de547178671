#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "spvit/ops.hpp"
#include "spvit/optim.hpp"
#include "spvit/tape.hpp"

using namespace spvit;
using spvit::testing::Td;

namespace {

void set_grad(Parameter<double>& p, std::vector<double> g) {
  p.value.zero_grad();
  accumulate_grad<double>(*p.value.impl(), g);
}

}  // namespace

TEST(Mse, Values) {
  EXPECT_EQ(mse_loss(Td(Shape{2, 1}, {1, 2}), Td(Shape{2, 1}, {1, 2})).item(), 0.0);
  EXPECT_EQ(mse_loss(Td(Shape{2, 1}, {1, 2}), Td(Shape{2, 1}, {0, 0})).item(), 2.5);
  EXPECT_THROW(mse_loss(Td::zeros({2, 1}), Td::zeros({2})), DimensionError);
}

TEST(Mse, GradientIsTwiceResidualOverN) {
  GradTape<double> tape;
  TapeScope<double> scope(tape);
  Td pred(Shape{4, 1}, {0.5, -1.0, 2.0, 3.25}, true);
  Td target(Shape{4, 1}, {0.0, 1.0, 2.5, -1.0});
  backward(mse_loss(pred, target));
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = 2.0 * (pred[i] - target[i]) / 4.0;
    EXPECT_NEAR(pred.grad()[i], expect, 1e-15);
    // central difference of the closed form
    const double h = 1e-5;
    auto loss_at = [&](double v) {
      double acc = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double p = j == i ? v : pred[j];
        acc += (p - target[j]) * (p - target[j]);
      }
      return acc / 4;
    };
    EXPECT_NEAR(pred.grad()[i], (loss_at(pred[i] + h) - loss_at(pred[i] - h)) / (2 * h), 1e-9);
  }
}

TEST(Adam, ZeroGradientsChangeNothing) {
  ParameterSet<double> ps;
  ps.add("w", Td(Shape{3}, {1.0, -2.0, 0.5}));
  set_grad(ps.at("w"), {0, 0, 0});
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step(ps, st);
  EXPECT_EQ(ps.at("w").value.values(), (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(st.m.at("w"), std::vector<double>(3, 0.0));
  EXPECT_EQ(st.v.at("w"), std::vector<double>(3, 0.0));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet<double> ps;
  ps.add("theta", Td(Shape{1}, {0.0}));
  set_grad(ps.at("theta"), {1.0});
  AdamState<double> st;
  st.hyper.lr = 0.1;
  adam_step(ps, st);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(ps.at("theta").value[0], -0.1, 1e-8);
  EXPECT_DOUBLE_EQ(ps.at("theta").value[0], -0.1 / (1.0 + 1e-8));
}

TEST(Adam, MatchesHandRecurrenceOverSteps) {
  ParameterSet<double> ps;
  ps.add("w", Td(Shape{2}, {0.3, -0.7}));
  AdamState<double> st;
  st.hyper.lr = 0.01;
  double theta[2] = {0.3, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
  Rng rng(51);
  for (int t = 1; t <= 25; ++t) {
    std::vector<double> g{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    set_grad(ps.at("w"), g);
    adam_step(ps, st);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      theta[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(ps.at("w").value[i], theta[i], 1e-14) << "step " << t;
    }
  }
  EXPECT_EQ(st.t, 25);
}

TEST(Adam, FrozenAndBuffersUntouched) {
  ParameterSet<float> ps;
  ps.add("a", Tensor<float>(Shape{2}, {1.0f, 2.0f}));
  ps.add("b", Tensor<float>(Shape{2}, {3.0f, 4.0f}), false);
  ps.add_buffer("c", Tensor<float>(Shape{1}, {5.0f}));
  AdamState<float> st;
  for (int i = 0; i < 100; ++i) {
    ps.zero_grad();
    accumulate_grad<float>(*ps.at("a").value.impl(), std::vector<float>{1.0f, -1.0f});
    accumulate_grad<float>(*ps.at("b").value.impl(), std::vector<float>{1.0f, -1.0f});
    adam_step(ps, st);
  }
  EXPECT_EQ(ps.at("b").value.values(), (std::vector<float>{3.0f, 4.0f}));
  EXPECT_EQ(ps.at("c").value[0], 5.0f);
  EXPECT_NE(ps.at("a").value[0], 1.0f);
  EXPECT_EQ(st.m.count("b"), 0u);
}

TEST(Adam, TrainableWithoutGradientIsAnError) {
  ParameterSet<double> ps;
  ps.add("w", Td::zeros({2}));
  AdamState<double> st;
  EXPECT_THROW(adam_step(ps, st), ContractError);
}
