#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dplab/error.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

inline constexpr double kDistributionTolerance = 1e-9;

/// Per-example class distributions P(k|x), one row per example: shape (n, M).
struct ClassifierOutput {
  Tensor probs;

  std::size_t examples() const { return probs.batch(); }
  std::size_t classes() const { return probs.size() / probs.batch(); }
  std::span<const double> row(std::size_t i) const {
    return {probs.data() + i * classes(), classes()};
  }

  void validate() const {
    if (probs.rank() != 2) throw ShapeError("classifier output", {0, 0}, probs.shape());
    for (std::size_t i = 0; i < examples(); ++i) {
      double s = 0.0;
      for (double v : row(i)) {
        if (!(v >= 0.0) || !std::isfinite(v))
          throw NumericError("class probability is negative or not finite in row " +
                             std::to_string(i));
        s += v;
      }
      if (std::abs(s - 1.0) > kDistributionTolerance)
        throw NumericError("class probabilities in row " + std::to_string(i) +
                           " sum to " + std::to_string(s));
    }
  }
};

namespace detail {

// Sum of the values in ascending order: the result depends only on the
// multiset, so reordering the inputs cannot change it.
inline double ordered_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace detail

/// KL(p || q) = sum p (log p - log q), 0 log 0 = 0, natural log.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ShapeError("kl_divergence", {p.size()}, {q.size()});
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] < 0.0 || q[k] < 0.0) throw ParameterError("kl_divergence: negative probability");
    if (p[k] == 0.0) continue;
    if (q[k] == 0.0)
      throw NumericError("kl_divergence is infinite: p > 0 where q = 0 at class " +
                         std::to_string(k));
    s += p[k] * (std::log(p[k]) - std::log(q[k]));
  }
  return std::max(s, 0.0);
}

/// Marginal P(k) over rows [first, first + count).
inline std::vector<double> marginal(const ClassifierOutput& out, std::size_t first,
                                    std::size_t count) {
  const std::size_t m = out.classes();
  std::vector<double> p(m);
  std::vector<double> col(count);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < count; ++i) col[i] = out.probs[(first + i) * m + k];
    p[k] = detail::ordered_sum(col) / static_cast<double>(count);
  }
  return p;
}

struct IsResult {
  double score = 0.0;  ///< mean over splits
  double mean = 0.0;
  double std = 0.0;    ///< population standard deviation over splits
  std::size_t splits = 0;
  std::vector<double> split_scores;
};

/// Per split: s = exp(mean_x KL(P(k|x) || P(k))), with P(k) the marginal of
/// that split. Splits are equal-sized consecutive blocks; a remainder of
/// n mod splits trailing examples is left out.
inline IsResult inception_score(const ClassifierOutput& out, std::size_t splits = 10) {
  if (splits == 0) throw ParameterError("inception score needs at least one split");
  out.validate();
  const std::size_t n = out.examples();
  if (n < splits)
    throw ParameterError("inception score: " + std::to_string(n) + " examples for " +
                         std::to_string(splits) + " splits");
  const std::size_t per = n / splits;
  IsResult r;
  r.splits = splits;
  for (std::size_t s = 0; s < splits; ++s) {
    const std::vector<double> pk = marginal(out, s * per, per);
    std::vector<double> kl(per);
    for (std::size_t i = 0; i < per; ++i) kl[i] = kl_divergence(out.row(s * per + i), pk);
    r.split_scores.push_back(std::exp(detail::ordered_sum(kl) / static_cast<double>(per)));
  }
  double sum = 0.0;
  for (double v : r.split_scores) sum += v;
  r.mean = sum / static_cast<double>(splits);
  double var = 0.0;
  for (double v : r.split_scores) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / static_cast<double>(splits));
  r.score = r.mean;
  return r;
}

}  // namespace dplab
