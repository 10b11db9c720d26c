#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dplab/accountant.hpp"
#include "rdp_quadrature.hpp"

using namespace dplab;
using dplab::testing::SgmQuadrature;

TEST(RdpStep, QuadratureAgreementSpotGrid) {
  // Full grid runs in the acceptance suite; a spread of points here.
  for (double q : {0.01, 0.1})
    for (double sigma : {0.8, 2.0}) {
      SgmQuadrature oracle(q, sigma);
      for (int alpha : {2, 3, 8, 17, 32, 64}) {
        const double closed = rdp_sgm_step(q, sigma, alpha);
        const double ref = oracle.rdp(alpha);
        EXPECT_NEAR(closed, ref, 1e-6 * ref) << "q=" << q << " sigma=" << sigma << " alpha=" << alpha;
      }
    }
}

TEST(RdpStep, MixtureOrientationDominates) {
  SgmQuadrature oracle(0.05, 1.0);
  for (int alpha : {2, 5, 20})
    EXPECT_GE(oracle.mixture_over_base(alpha), oracle.base_over_mixture(alpha));
}

TEST(RdpStep, FullSamplingReducesToGaussianMechanism) {
  for (double sigma : {0.5, 1.0, 2.0})
    for (int alpha = 2; alpha <= 256; ++alpha) {
      const double expect = alpha / (2.0 * sigma * sigma);
      EXPECT_NEAR(rdp_sgm_step(1.0, sigma, alpha), expect, 1e-12 * expect);
    }
}

TEST(RdpStep, VanishingSamplingRateGivesZero) {
  EXPECT_LT(rdp_sgm_step(1e-12, 1.0, 2), 1e-12);
  // At alpha = 64 the k = alpha term q^64 e^(64*63/2) only vanishes for tiny q.
  EXPECT_LT(rdp_sgm_step(1e-100, 1.0, 64), 1e-12);
}

TEST(RdpStep, StableAtExtremes) {
  const double v = rdp_sgm_step(0.5, 0.3, 256);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
}

TEST(RdpStep, Monotonicity) {
  for (int alpha : {2, 10, 64}) {
    EXPECT_LT(rdp_sgm_step(0.01, 1.0, alpha), rdp_sgm_step(0.02, 1.0, alpha));
    EXPECT_GT(rdp_sgm_step(0.01, 0.8, alpha), rdp_sgm_step(0.01, 1.0, alpha));
  }
  for (int alpha = 2; alpha < 128; ++alpha)
    EXPECT_LT(rdp_sgm_step(0.01, 1.0, alpha), rdp_sgm_step(0.01, 1.0, alpha + 1));
}

TEST(RdpStep, ParameterErrors) {
  EXPECT_THROW(rdp_sgm_step(1.1, 1.0, 2), ParameterError);
  EXPECT_THROW(rdp_sgm_step(0.0, 1.0, 2), ParameterError);
  EXPECT_THROW(rdp_sgm_step(0.1, 0.0, 2), ParameterError);
  EXPECT_THROW(rdp_sgm_step(0.1, -1.0, 2), ParameterError);
  EXPECT_THROW(rdp_sgm_step(0.1, 1.0, 1), ParameterError);
}

TEST(Compose, ZeroStepsIsIdentity) {
  RdpCurve c = compose(RdpCurve::zeros(), 7, 0.02, 1.1);
  RdpCurve d = compose(c, 0, 0.5, 0.5);
  EXPECT_EQ(d.eps, c.eps);
  EXPECT_EQ(d.steps, c.steps);
}

TEST(Compose, Additive) {
  RdpCurve base = compose(RdpCurve::zeros(), 3, 0.02, 1.1);
  RdpCurve two = compose(compose(base, 5, 0.01, 1.0), 9, 0.01, 1.0);
  RdpCurve one = compose(base, 14, 0.01, 1.0);
  ASSERT_EQ(two.steps, one.steps);
  for (std::size_t i = 0; i < one.eps.size(); ++i)
    EXPECT_NEAR(two.eps[i], one.eps[i], 1e-12 * one.eps[i]);
}

TEST(Compose, ThousandStepsAtOrderEight) {
  RdpCurve c = compose(RdpCurve::zeros(), 1000, 0.01, 1.0);
  const double single = rdp_sgm_step(0.01, 1.0, 8);
  EXPECT_DOUBLE_EQ(c.eps[8 - kMinOrder], 1000.0 * single);
  EXPECT_EQ(c.steps, 1000u);
}

TEST(EpsilonDeltaConversion, ZeroCurveUsesLargestOrder) {
  EpsilonDelta e = to_epsilon_delta(RdpCurve::zeros(), 1e-5);
  EXPECT_EQ(e.alpha_star, 256);
  EXPECT_NEAR(e.epsilon, -std::log(1e-5) / 255.0, 1e-15);
  EXPECT_NEAR(e.epsilon, 0.045149, 1e-6);
}

TEST(EpsilonDeltaConversion, SingleOrder) {
  RdpCurve c;
  c.orders = {2};
  c.eps = {1.0};
  EpsilonDelta e = to_epsilon_delta(c, 1e-5);
  EXPECT_NEAR(e.epsilon, 12.512925464970229, 1e-9);
  EXPECT_EQ(e.alpha_star, 2);
}

TEST(EpsilonDeltaConversion, MonotoneInDelta) {
  RdpCurve c = compose(RdpCurve::zeros(), 500, 0.01, 0.9);
  double prev = std::numeric_limits<double>::infinity();
  for (double delta : {1e-9, 1e-7, 1e-5, 1e-3, 0.1}) {
    const double e = to_epsilon_delta(c, delta).epsilon;
    EXPECT_LE(e, prev);
    prev = e;
  }
}

TEST(EpsilonDeltaConversion, Errors) {
  EXPECT_THROW(to_epsilon_delta(RdpCurve{}, 1e-5), ParameterError);
  EXPECT_THROW(to_epsilon_delta(RdpCurve::zeros(), 0.0), ParameterError);
  EXPECT_THROW(to_epsilon_delta(RdpCurve::zeros(), 1.0), ParameterError);
}

TEST(AccountantRun, EpsilonNonDecreasingInSteps) {
  Accountant acc(64.0 / 4000.0, 0.8);
  double prev = 0.0;
  for (int i = 0; i < 50; ++i) {
    acc.charge(40);
    const double e = acc.epsilon(1e-5).epsilon;
    EXPECT_GE(e, prev);
    prev = e;
  }
}

TEST(AccountantRun, MatchesOfflineRecomputation) {
  Accountant acc(0.016, 0.8);
  acc.charge(1234);
  EpsilonDelta live = acc.epsilon(1e-5);
  EpsilonDelta offline = to_epsilon_delta(compose(RdpCurve::zeros(), 1234, 0.016, 0.8), 1e-5);
  EXPECT_EQ(live.epsilon, offline.epsilon);
  EXPECT_EQ(live.alpha_star, offline.alpha_star);
}

TEST(AccountantRun, NoNoiseMeansNoGuarantee) {
  Accountant acc(0.1, 0.0);
  acc.charge();
  EXPECT_TRUE(std::isinf(acc.epsilon(1e-5).epsilon));
}
