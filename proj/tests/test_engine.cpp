#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dplab/engine.hpp"
#include "grad_scenarios.hpp"
#include "test_support.hpp"

using namespace dplab;
using namespace dplab::testing;

TEST(Forward, IdentityGraphReturnsInput) {
  Sequential g({3, 2});
  CounterRng rng(1);
  Tensor x = random_tensor({4, 3, 2}, rng);
  EXPECT_EQ(forward(g, g.zero_params(), x), x);
}

TEST(Forward, ZeroDenseGivesZero) {
  Sequential g({5});
  g.dense(3);
  CounterRng rng(2);
  Tensor y = forward(g, g.zero_params(), random_tensor({2, 5}, rng));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
}

TEST(Forward, HandUnrolledConvolution) {
  Sequential g({1, 3, 3});
  g.conv2d(1, 2, 1, 0);
  ParamSet p = g.zero_params();
  p[0] = Tensor({1, 1, 2, 2}, {1, 2, 3, 4});
  p[1] = Tensor({1}, {0.5});
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor y = forward(g, p, x);
  // 1*1+2*2+3*4+4*5, 1*2+2*3+3*5+4*6, 1*4+2*5+3*7+4*8, 1*5+2*6+3*8+4*9
  EXPECT_EQ(y, Tensor({1, 1, 2, 2}, {37.5, 47.5, 67.5, 77.5}));
}

TEST(Forward, StridedPaddedConvolutionMatchesDirectSum) {
  Sequential g({2, 7, 7});
  g.conv2d(3, 5, 2, 2);
  CounterRng rng(3);
  ParamSet p = g.init_params(rng);
  Tensor x = random_tensor({1, 2, 7, 7}, rng);
  Tensor y = forward(g, p, x);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double acc = p[1][o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 5; ++ky)
            for (int kx = 0; kx < 5; ++kx) {
              int iy = oy * 2 - 2 + ky, ix = ox * 2 - 2 + kx;
              if (iy < 0 || iy >= 7 || ix < 0 || ix >= 7) continue;
              acc += p[0][((o * 2 + c) * 5 + ky) * 5 + kx] * x[(c * 7 + iy) * 7 + ix];
            }
        EXPECT_NEAR(y[(o * 4 + oy) * 4 + ox], acc, 1e-12);
      }
}

TEST(Forward, TransposedConvolutionIsAdjointOfConvolution) {
  // <conv(x), y> == <x, conv_t(y)> for shared weights and zero bias.
  Sequential conv({2, 7, 7});
  conv.conv2d(3, 5, 2, 2);
  Sequential deconv({3, 4, 4});
  deconv.conv_transpose2d(2, 5, 2, 2, 0);
  ASSERT_EQ(deconv.output_shape(), (Shape{2, 7, 7}));
  CounterRng rng(4);
  ParamSet pc = conv.zero_params();
  pc[0] = random_tensor({3, 2, 5, 5}, rng);
  ParamSet pd = deconv.zero_params();
  pd[0] = pc[0];
  Tensor x = random_tensor({1, 2, 7, 7}, rng);
  Tensor y = random_tensor({1, 3, 4, 4}, rng);
  Tensor cx = forward(conv, pc, x);
  Tensor ty = forward(deconv, pd, y);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Forward, ShapeMismatchNamesLayer) {
  Sequential g({1, 5, 5});
  g.conv2d(2, 3, 2, 1, "critic_in");
  try {
    forward(g, g.zero_params(), Tensor({1, 1, 4, 4}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("critic_in"), std::string::npos);
    EXPECT_EQ(e.actual(), (Shape{1, 1, 4, 4}));
  }
}

TEST(Forward, DeterministicAcrossRuns) {
  Sequential g = mixed_network();
  CounterRng r1(9), r2(9);
  ParamSet p1 = g.init_params(r1), p2 = g.init_params(r2);
  Tensor x1 = random_tensor({3, 1, 6, 6}, r1), x2 = random_tensor({3, 1, 6, 6}, r2);
  EXPECT_EQ(forward(g, p1, x1), forward(g, p2, x2));
}

TEST(PerExampleGrads, QuadraticLossAnalytic) {
  // L = (w x)^2 / 2 with scalar w and x = 2: dL/dw = w x^2 = 4 w.
  Sequential g({1});
  g.dense(1);
  ParamSet p = g.zero_params();
  p[0][0] = 0.7;
  ExampleLoss half_square = [](const Tensor& out, std::size_t) {
    return LossEval{0.5 * out[0] * out[0], Tensor(out.shape(), out[0])};
  };
  std::vector<Tensor> batch{Tensor({1}, {2.0})};
  auto grads = per_example_grads(g, p, batch, half_square);
  ASSERT_EQ(grads.size(), 1u);
  EXPECT_DOUBLE_EQ(grads[0].grads[0][0], 4.0 * 0.7);
  EXPECT_EQ(grads[0].scope, GradScope::PerExample);
}

TEST(PerExampleGrads, SingletonBatchEqualsBatchGradient) {
  Sequential g = mixed_network();
  CounterRng rng(5);
  ParamSet p = g.init_params(rng);
  Tensor x = random_tensor({1, 1, 6, 6}, rng);
  auto per = per_example_grads(g, p, x);
  GradRecord whole = batch_mean_grad(g, p, x);
  EXPECT_EQ(per[0].flatten(), whole.flatten());
}

TEST(PerExampleGrads, MatchFiniteDifferences) {
  Sequential g = mixed_network();
  CounterRng rng(6);
  ParamSet p = g.init_params(rng);
  Tensor batch = random_tensor({4, 1, 6, 6}, rng);
  auto grads = per_example_grads(g, p, batch);
  for (std::size_t i = 0; i < batch.batch(); ++i) {
    Tensor xi = batch.row(i);
    auto fd = finite_difference(p, [&](const ParamSet& q) { return forward(g, q, xi).item(); });
    EXPECT_LT(relative_error(grads[i].flatten(), fd), 1e-4) << "example " << i;
  }
}

TEST(PerExampleGrads, InputGradientMatchesFiniteDifferences) {
  Sequential g = mixed_network();
  CounterRng rng(7);
  ParamSet p = g.init_params(rng);
  Tensor x = random_tensor({1, 1, 6, 6}, rng);
  Tensor u = input_grad(g, p, x);
  auto fd = finite_difference(x, [&](const Tensor& xx) { return forward(g, p, xx).item(); });
  EXPECT_LT(relative_error({u.values().begin(), u.values().end()}, fd), 1e-4);
}

TEST(PerExampleGrads, MeanEqualsBatchMeanGradient) {
  Sequential g = mixed_network();
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    CounterRng rng(seed);
    ParamSet p = g.init_params(rng);
    Tensor batch = random_tensor({5, 1, 6, 6}, rng);
    auto per = per_example_grads(g, p, batch);
    std::vector<double> mean(p.total_size(), 0.0);
    for (const auto& r : per) {
      auto f = r.flatten();
      for (std::size_t k = 0; k < f.size(); ++k) mean[k] += f[k] / 5.0;
    }
    GradRecord whole = batch_mean_grad(g, p, batch);
    EXPECT_EQ(whole.scope, GradScope::BatchMean);
    EXPECT_LT(relative_error(mean, whole.flatten()), 1e-10);
  }
}

TEST(PerExampleGrads, NonScalarLossRejected) {
  Sequential g({3});
  g.dense(2);
  std::vector<Tensor> batch{Tensor({3}, 1.0)};
  EXPECT_THROW(per_example_grads(g, g.zero_params(), batch), ShapeError);
}

TEST(GradOfGradNorm, LinearCriticClosedForm) {
  // D(y) = c * sum(y) + b: grad_y D = c * 1, penalty (|c| sqrt(d) - 1)^2,
  // d penalty / d w_j = 2 (|c| sqrt(d) - 1) c / (|c| sqrt(d)), bias gradient 0.
  const std::size_t d = 9;
  const double c = -0.8;
  Sequential g({d});
  g.dense(1);
  ParamSet p = g.zero_params();
  p[0].fill(c);
  p[1][0] = 0.3;
  CounterRng rng(8);
  PenaltyGrad r = grad_of_grad_norm(g, p, random_tensor({d}, rng));
  const double n = std::abs(c) * std::sqrt(static_cast<double>(d));
  EXPECT_NEAR(r.penalty, (n - 1.0) * (n - 1.0), 1e-14);
  EXPECT_NEAR(r.input_grad_norm, n, 1e-14);
  for (double v : r.grad.grads[0].values()) EXPECT_NEAR(v, 2.0 * (n - 1.0) * c / n, 1e-14);
  EXPECT_EQ(r.grad.grads[1][0], 0.0);
}

TEST(GradOfGradNorm, UnitGradientNormIsPenaltyMinimum) {
  Sequential g({4});
  g.dense(1);
  ParamSet p = g.zero_params();
  p[0] = Tensor({1, 4}, {0.5, -0.5, 0.5, 0.5});
  PenaltyGrad r = grad_of_grad_norm(g, p, Tensor({4}, 1.0));
  EXPECT_NEAR(r.penalty, 0.0, 1e-30);
  EXPECT_EQ(r.grad.norm(), 0.0);
}

TEST(GradOfGradNorm, ZeroInputGradientUsesZeroSubgradient) {
  Sequential g({4});
  g.dense(1);
  PenaltyGrad r = grad_of_grad_norm(g, g.zero_params(), Tensor({4}, 1.0));
  EXPECT_EQ(r.penalty, 1.0);
  EXPECT_EQ(r.input_grad_norm, 0.0);
  EXPECT_EQ(r.grad.norm(), 0.0);
}

TEST(GradOfGradNorm, MatchesFiniteDifferencesOfPenalty) {
  Sequential g = small_critic();
  for (std::uint64_t seed = 20; seed < 24; ++seed) {
    CounterRng rng(seed);
    ParamSet p = g.init_params(rng);
    Tensor y = random_tensor({1, 1, 5, 5}, rng);
    PenaltyGrad r = grad_of_grad_norm(g, p, y);
    EXPECT_NEAR(r.penalty, penalty_via_first_order(g, p, y), 1e-12);
    auto fd = finite_difference(
        p, [&](const ParamSet& q) { return penalty_via_first_order(g, q, y); });
    EXPECT_LT(relative_error(r.grad.flatten(), fd), 1e-3) << "seed " << seed;
  }
}

TEST(GradOfGradNorm, MixedNetworkMatchesFiniteDifferences) {
  Sequential g = mixed_network();
  CounterRng rng(30);
  ParamSet p = g.init_params(rng);
  Tensor y = random_tensor({1, 1, 6, 6}, rng);
  PenaltyGrad r = grad_of_grad_norm(g, p, y);
  auto fd = finite_difference(p, [&](const ParamSet& q) { return penalty_via_first_order(g, q, y); });
  EXPECT_LT(relative_error(r.grad.flatten(), fd), 1e-3);
}
