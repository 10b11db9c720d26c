#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dplab/error.hpp"

namespace dplab {

inline constexpr int kMinOrder = 2;
inline constexpr int kMaxOrder = 256;

inline double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// RDP of one step of the sampled Gaussian mechanism at integer order alpha,
/// sampling rate q and noise multiplier sigma:
///
///   eps(alpha) = log( sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp(k(k-1)/(2 sigma^2)) ) / (alpha-1)
///
/// Evaluated as a log-sum-exp over log-domain terms.
inline double rdp_sgm_step(double q, double sigma, int alpha) {
  if (!(q > 0.0 && q <= 1.0)) throw ParameterError("sampling rate q must lie in (0, 1]");
  if (!(sigma > 0.0) || std::isinf(sigma)) throw ParameterError("noise multiplier must be positive");
  if (alpha < kMinOrder) throw ParameterError("Renyi order must be an integer >= 2");

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(alpha) + 1);
  for (int k = 0; k <= alpha; ++k) {
    const int rest = alpha - k;
    if (q == 1.0 && rest > 0) continue;  // (1 - q)^rest == 0
    double t = log_binomial(alpha, k) + k * log_q + static_cast<double>(k) * (k - 1) * inv_two_var;
    if (rest > 0) t += rest * log_1mq;
    terms.push_back(t);
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  const double eps = (m + std::log(s)) / (alpha - 1);
  if (!std::isfinite(eps)) throw NumericError("RDP evaluation overflowed");
  return std::max(eps, 0.0);
}

/// Accumulated RDP over the integer order grid.
struct RdpCurve {
  std::vector<int> orders;
  std::vector<double> eps;
  std::uint64_t steps = 0;

  static RdpCurve zeros(int min_order = kMinOrder, int max_order = kMaxOrder) {
    RdpCurve c;
    for (int a = min_order; a <= max_order; ++a) {
      c.orders.push_back(a);
      c.eps.push_back(0.0);
    }
    return c;
  }

  bool empty() const { return orders.empty(); }
};

/// Adds `steps` identical sampled-Gaussian steps; RDP composes additively.
inline RdpCurve compose(RdpCurve curve, std::uint64_t steps, double q, double sigma) {
  if (steps == 0) return curve;
  for (std::size_t i = 0; i < curve.orders.size(); ++i)
    curve.eps[i] += static_cast<double>(steps) * rdp_sgm_step(q, sigma, curve.orders[i]);
  curve.steps += steps;
  return curve;
}

struct EpsilonDelta {
  double epsilon = 0.0;
  double delta = 0.0;
  int alpha_star = 0;
  double rdp_at_alpha_star = 0.0;
};

/// eps = min_alpha [ eps'(alpha) - log(delta) / (alpha - 1) ], natural log.
/// Ties resolve to the smallest order.
inline EpsilonDelta to_epsilon_delta(const RdpCurve& curve, double delta) {
  if (curve.empty()) throw ParameterError("empty RDP order grid");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("delta must lie in (0, 1)");
  const double log_delta = std::log(delta);
  EpsilonDelta best{std::numeric_limits<double>::infinity(), delta, 0, 0.0};
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    const double e = curve.eps[i] - log_delta / (curve.orders[i] - 1);
    if (e < best.epsilon) best = {e, delta, curve.orders[i], curve.eps[i]};
  }
  return best;
}

/// Per-run accountant charging one sampled-Gaussian step per private update.
/// A zero noise multiplier gives no guarantee: epsilon is +inf.
class Accountant {
 public:
  Accountant(double q, double sigma) : q_(q), sigma_(sigma), per_step_(RdpCurve::zeros()) {
    if (!(q > 0.0 && q <= 1.0)) throw ParameterError("sampling rate q must lie in (0, 1]");
    if (!(sigma >= 0.0)) throw ParameterError("noise multiplier must be non-negative");
    if (sigma > 0.0) per_step_ = compose(per_step_, 1, q, sigma);
  }

  void charge(std::uint64_t steps = 1) { steps_ += steps; }

  std::uint64_t steps() const { return steps_; }
  double sampling_rate() const { return q_; }
  double noise_multiplier() const { return sigma_; }
  bool private_mode() const { return sigma_ > 0.0; }

  RdpCurve curve() const {
    RdpCurve c = RdpCurve::zeros();
    if (!private_mode()) {
      std::fill(c.eps.begin(), c.eps.end(), steps_ ? std::numeric_limits<double>::infinity() : 0.0);
    } else {
      for (std::size_t i = 0; i < c.eps.size(); ++i)
        c.eps[i] = static_cast<double>(steps_) * per_step_.eps[i];
    }
    c.steps = steps_;
    return c;
  }

  EpsilonDelta epsilon(double delta) const {
    if (!private_mode() && steps_ > 0)
      return {std::numeric_limits<double>::infinity(), delta, 0,
              std::numeric_limits<double>::infinity()};
    return to_epsilon_delta(curve(), delta);
  }

 private:
  double q_;
  double sigma_;
  RdpCurve per_step_;
  std::uint64_t steps_ = 0;
};

}  // namespace dplab
