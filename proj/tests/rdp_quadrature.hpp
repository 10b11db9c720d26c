#pragma once

// Test-only reference for the sampled Gaussian mechanism: Renyi divergences
// between the mixture p = (1-q) N(0, s^2) + q N(1, s^2) and the base
// N(0, s^2), integrated numerically with adaptive Gauss-Kronrod.

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace dplab::testing {

class SgmQuadrature {
 public:
  SgmQuadrature(double q, double sigma) : q_(q), sigma_(sigma) {}

  /// D_alpha(p || base), the orientation with the mixture on top.
  double mixture_over_base(int alpha) const { return divergence(alpha, alpha); }

  /// D_alpha(base || p).
  double base_over_mixture(int alpha) const { return divergence(alpha, 1.0 - alpha); }

  /// The mechanism's RDP takes the worse of the two orientations.
  double rdp(int alpha) const {
    return std::max(mixture_over_base(alpha), base_over_mixture(alpha));
  }

 private:
  // log(p(x) / base(x)) = log(1 - q + q exp((2x - 1) / (2 s^2)))
  double log_ratio(double x) const {
    const double a = (2.0 * x - 1.0) / (2.0 * sigma_ * sigma_);
    if (q_ == 1.0) return a;
    if (a < 0.0) return std::log1p(q_ * std::expm1(a));
    // log((1-q) + q e^a) = a + log(q + (1-q) e^-a)
    return a + std::log(q_ + (1.0 - q_) * std::exp(-a));
  }

  double log_base(double x) const {
    return -0.5 * (x / sigma_) * (x / sigma_) - std::log(sigma_ * std::sqrt(2.0 * std::numbers::pi));
  }

  // (1 / (alpha - 1)) log integral base(x) (p(x)/base(x))^beta dx
  double divergence(int alpha, double beta) const {
    const double lo = -40.0 * sigma_;
    const double hi = std::max(1.0, static_cast<double>(alpha)) + 40.0 * sigma_;
    // Peak of the log-integrand, located on a fine grid.
    double fmax = -INFINITY;
    const double grid = sigma_ / 20.0;
    for (double x = lo; x <= hi; x += grid)
      fmax = std::max(fmax, log_base(x) + beta * log_ratio(x));

    const bool shifted = fmax > 30.0;
    auto integrand = [&](double x) {
      const double l = beta * log_ratio(x);
      const double lb = log_base(x);
      if (shifted) return std::exp(lb + l - fmax);
      if (l > 1.0) return std::exp(lb + l) - std::exp(lb);
      return std::exp(lb) * std::expm1(l);
    };

    // Pieces whose log-integrand stays far below the peak contribute nothing
    // at double precision and are skipped.
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    double total = 0.0;
    const double piece = sigma_ / 2.0;
    for (double a = lo; a < hi; a += piece) {
      const double b = std::min(hi, a + piece);
      double piece_max = -INFINITY;
      for (double x = a; x <= b; x += grid)
        piece_max = std::max(piece_max, std::max(log_base(x) + beta * log_ratio(x), log_base(x)));
      if (piece_max < std::max(fmax, 0.0) - 60.0) continue;
      total += GK::integrate(integrand, a, b, 8, 1e-11);
    }
    if (shifted) return (fmax + std::log(total)) / (alpha - 1);
    return std::log1p(total) / (alpha - 1);
  }

  double q_;
  double sigma_;
};

}  // namespace dplab::testing
