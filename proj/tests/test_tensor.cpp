#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "mvdis/errors.hpp"
#include "mvdis/tensor.hpp"

using namespace mvdis;
using mvdis::testing::max_gradient_error;
using mvdis::testing::random_tensor;

TEST(Matmul, IdentityTimesColumn) {
  auto a = TensorD::from_values({2, 2}, {1, 0, 0, 1});
  auto b = TensorD::from_values({2, 1}, {2, 3});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 2.0);
  EXPECT_EQ(c[1], 3.0);
}

TEST(Matmul, RowTimesColumn) {
  auto c = matmul(TensorD::from_values({1, 2}, {1, 2}), TensorD::from_values({2, 1}, {3, 4}));
  EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  auto a = random_tensor({3, 4}, rng, 1.0, false);
  auto b = random_tensor({4, 2}, rng, 1.0, false);
  auto c = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double ref = 0.0;
      for (int k = 0; k < 4; ++k) ref += a[i * 4 + k] * b[k * 2 + j];
      EXPECT_NEAR(c[i * 2 + j], ref, 1e-12);
    }
}

TEST(Matmul, BroadcastsLeadingAxes) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({2, 3, 4}, rng, 1.0, false);
  auto b = random_tensor({4, 5}, rng, 1.0, false);
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 5}));
  auto flat = matmul(reshape(a, {6, 4}), b);
  EXPECT_TRUE((c.data() == flat.data()).all());
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = TensorD::zeros({2, 3});
  auto b = TensorD::zeros({2, 2});
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("(2, 2)"), std::string::npos) << e.what();
  }
}

TEST(Relu, ForwardAndSubgradient) {
  auto x = TensorD::from_values({3}, {-1, 0, 2}, true);
  auto y = relu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);

  auto neg_only = relu(TensorD::full({4}, -3.0));
  EXPECT_TRUE((neg_only.data() == 0.0).all());
}

TEST(Elementwise, ClampLogExp) {
  EXPECT_EQ(clamp(TensorD::scalar(1.5), 0.0, 1.0).item(), 1.0);
  for (double v : {-2.0, 0.0, 3.0}) EXPECT_NEAR(log(exp(TensorD::scalar(v))).item(), v, 1e-12);
  auto x = TensorD::scalar(2.0, true);
  log(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.5);
  EXPECT_THROW(log(TensorD::scalar(0.0)), DomainError);
  EXPECT_THROW(log(TensorD::scalar(-1.0)), DomainError);
}

TEST(Elementwise, Broadcasting) {
  auto a = TensorD::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto b = TensorD::from_values({3}, {10, 20, 30}, true);
  auto c = add(a, b);
  EXPECT_EQ(c[5], 36.0);
  sum(c).backward();
  EXPECT_TRUE((b.grad() == 2.0).all());
  EXPECT_THROW(add(TensorD::zeros({2, 3}), TensorD::zeros({2})), DimensionError);
}

TEST(Reductions, Basics) {
  EXPECT_EQ(mean(TensorD::from_values({3}, {1, 2, 3})).item(), 2.0);
  EXPECT_EQ(variance(TensorD::from_values({3}, {2, 2, 2}), 0).item(), 0.0);
  const double lse = logsumexp(TensorD::from_values({2}, {1000, 1000}), 0).item();
  EXPECT_TRUE(std::isfinite(lse));
  EXPECT_NEAR(lse, 1000.0 + std::log(2.0), 1e-9);
  EXPECT_TRUE(std::isfinite(logsumexp(TensorD::from_values({3}, {-1e6, 1e6, 0}), 0).item()));
}

TEST(Reductions, AxisAndPopulationVariance) {
  auto a = TensorD::from_values({2, 3}, {1, 2, 3, 4, 6, 8});
  auto s = sum(a, 0);
  EXPECT_EQ(s.shape(), (Shape{3}));
  EXPECT_EQ(s[2], 11.0);
  auto m = mean(a, 1, true);
  EXPECT_EQ(m.shape(), (Shape{2, 1}));
  EXPECT_EQ(m[1], 6.0);
  auto v = variance(a, 1);
  EXPECT_NEAR(v[0], 2.0 / 3.0, 1e-15);
  auto sd = std_dev(a, 1, 1e-4);
  EXPECT_NEAR(sd[0], std::sqrt(2.0 / 3.0 + 1e-4), 1e-15);
  EXPECT_THROW(sum(a, 2), DimensionError);
}

TEST(Concat, ForwardSplitAndGradient) {
  auto a = TensorD::from_values({1, 1, 2}, {1, 2}, true);
  auto b = TensorD::from_values({1, 1, 1}, {3}, true);
  auto c = concat_features(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(c[2], 3.0);
  EXPECT_TRUE((slice_features(c, 0, 2).data() == a.data()).all());
  EXPECT_TRUE((slice_features(c, 2, 1).data() == b.data()).all());
  sum(c).backward();
  EXPECT_TRUE((a.grad() == 1.0).all());
  EXPECT_THROW(concat_features(TensorD::zeros({1, 2, 2}), TensorD::zeros({1, 1, 2})), DimensionError);
}

TEST(L2Normalize, Rows) {
  auto y = l2_normalize(TensorD::from_values({1, 2}, {3, 4}), 1e-8);
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  auto zero = l2_normalize(TensorD::zeros({1, 2}), 1e-8);
  EXPECT_TRUE((zero.data() == 0.0).all());

  std::mt19937_64 rng(11);
  auto r = l2_normalize(random_tensor({100, 7}, rng, 3.0, false), 1e-8);
  for (Index i = 0; i < 100; ++i) EXPECT_NEAR(r.matrix().row(i).norm(), 1.0, 1e-9);
}

TEST(Backward, SumOfSquares) {
  auto x = TensorD::from_values({3}, {1, 2, 3}, true);
  sum(square(x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Backward, MseOfIdenticalIsZeroGrad) {
  auto x = TensorD::from_values({3}, {1, -2, 3}, true);
  mean(square(sub(x, x))).backward();
  EXPECT_TRUE((x.grad() == 0.0).all());
}

TEST(Backward, Errors) {
  auto x = TensorD::from_values({2}, {1, 2}, true);
  EXPECT_THROW(square(x).backward(), ContractError);
  auto y = sum(square(x));
  y.backward();
  EXPECT_THROW(y.backward(), StateError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = TensorD::from_values({2}, {1, 2}, true);
  TensorD y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_mode_enabled());
    y = sum(square(x));
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(y.backward(), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  auto x = TensorD::scalar(3.0, true);
  auto y = mul(x, x);
  add(y, y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(GradientOracle, Compositions) {
  std::mt19937_64 rng(21);
  auto x = random_tensor({2, 3, 4}, rng);
  auto w = random_tensor({4, 5}, rng);
  auto b = random_tensor({5}, rng);
  auto fn = [](const std::vector<TensorD>& in) {
    auto h = add(matmul(in[0], in[1]), in[2]);
    auto z = l2_normalize(mean(h, 1), 1e-6);
    auto v = std_dev(concat_features(z, exp(scale(z, 0.3))), 0, 1e-4);
    return add(sum(logsumexp(z, 1)), add(mean(v), mean(square(clamp(h, -0.5, 0.5)))));
  };
  EXPECT_LT(max_gradient_error(fn, {x, w, b}), 1e-4);
}

TEST(GradientOracle, VarianceSqrtLog) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({6, 3}, rng);
  auto fn = [](const std::vector<TensorD>& in) {
    auto v = variance(in[0], 0, true);
    auto s = sqrt(add_scalar(v, 1.0));
    return mean(log(add_scalar(square(sub(in[0], s)), 0.5)));
  };
  EXPECT_LT(max_gradient_error(fn, {x}), 1e-4);
}

TEST(Determinism, BitwiseRepeatable) {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto x = random_tensor({4, 6}, rng);
    auto w = random_tensor({6, 3}, rng);
    sum(relu(matmul(x, w))).backward();
    return std::make_pair(Eigen::ArrayXd(x.grad()), Eigen::ArrayXd(w.grad()));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_TRUE((a.first == b.first).all());
  EXPECT_TRUE((a.second == b.second).all());
}

TEST(Tensor, FloatInstantiation) {
  auto a = TensorF::from_values({2}, {1.5f, -2.0f}, true);
  sum(square(a)).backward();
  EXPECT_FLOAT_EQ(a.grad()[1], -4.0f);
}
