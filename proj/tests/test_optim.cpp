#include <gtest/gtest.h>

#include <cmath>

#include "mvdis/errors.hpp"
#include "mvdis/optim.hpp"

using namespace mvdis;

TEST(AdamWStep, MatchesScalarReference) {
  AdamWOptions o{0.01, 0.1, 0.9, 0.999, 1e-8};
  Eigen::ArrayXd param(3);
  param << 1.0, -2.0, 0.5;
  AdamWState<double> state;
  double ref[3] = {1.0, -2.0, 0.5}, m[3] = {}, v[3] = {};
  for (int t = 1; t <= 5; ++t) {
    Eigen::ArrayXd grad(3);
    grad << 0.3 * t, -0.1, 2.0 / t;
    adamw_step<double>(param, grad, state, o);
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grad[i];
      v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * ref[i]);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(param[i], ref[i], 1e-14);
  }
  EXPECT_EQ(state.step, 5);
}

TEST(AdamWStep, FirstStepMovesByLearningRate) {
  AdamWOptions o{0.05, 0.0};
  Eigen::ArrayXd param = Eigen::ArrayXd::Constant(2, 1.0);
  Eigen::ArrayXd grad(2);
  grad << 4.0, -0.001;
  AdamWState<double> state;
  adamw_step<double>(param, grad, state, o);
  EXPECT_NEAR(param[0], 0.95, 1e-6);
  EXPECT_NEAR(param[1], 1.05, 1e-4);
}

TEST(AdamWStep, SizeMismatch) {
  Eigen::ArrayXd param(2), grad(3);
  AdamWState<double> state;
  EXPECT_THROW(adamw_step<double>(param, grad, state, {}), DimensionError);
}

TEST(AdamW, SkipsParametersWithoutGradient) {
  auto used = TensorD::from_values({2}, {1.0, 2.0}, true);
  auto unused = TensorD::from_values({2}, {3.0, 4.0}, true);
  AdamW<double> opt({used, unused}, {0.1, 0.5});
  sum(square(used)).backward();
  opt.step();
  EXPECT_EQ(unused[0], 3.0);
  EXPECT_EQ(unused[1], 4.0);
  EXPECT_NE(used[0], 1.0);
  EXPECT_EQ(opt.steps_taken(), 1);
  opt.zero_grad();
  EXPECT_FALSE(used.has_grad());
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
  auto p = TensorD::from_values({1}, {2.0}, true);
  AdamW<double> opt({p}, {0.1, 0.5});
  sum(scale(p, 0.0)).backward();
  opt.step();
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(AdamW, FloatParameters) {
  auto p = TensorF::from_values({2}, {1.0f, -1.0f}, true);
  AdamW<float> opt({p}, {0.1, 0.0});
  sum(square(p)).backward();
  opt.step();
  EXPECT_NEAR(p[0], 0.9f, 1e-6f);
  EXPECT_NEAR(p[1], -0.9f, 1e-6f);
}
