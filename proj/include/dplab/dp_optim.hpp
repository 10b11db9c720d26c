#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dplab/error.hpp"
#include "dplab/rng.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

/// Parameters of the sampled Gaussian mechanism applied to a clipped mean
/// gradient. The L2 sensitivity of the mean under add/remove adjacency is
/// clip / batch_size.
struct PrivacyParams {
  double clip = 1.0;              ///< per-example L2 bound C; may be +inf when sigma == 0
  double noise_multiplier = 1.0;  ///< sigma
  std::size_t batch_size = 1;     ///< expected |B|
  std::size_t dataset_size = 1;   ///< n
  double delta = 1e-5;

  double sampling_rate() const {
    return static_cast<double>(batch_size) / static_cast<double>(dataset_size);
  }

  void validate() const {
    if (!(clip > 0.0)) throw ParameterError("clip norm must be positive");
    if (!(noise_multiplier >= 0.0) || std::isinf(noise_multiplier))
      throw ParameterError("noise multiplier must be finite and non-negative");
    if (batch_size == 0) throw ParameterError("batch size must be positive");
    if (dataset_size == 0) throw ParameterError("dataset size must be positive");
    if (batch_size > dataset_size)
      throw ParameterError("sampling rate batch_size/dataset_size exceeds 1");
    if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("delta must lie in (0, 1)");
    if (std::isinf(clip) && noise_multiplier > 0.0)
      throw ParameterError("an unbounded clip norm admits no noise calibration");
  }
};

/// Tolerance on the clipped-norm precondition of noisy_mean.
inline constexpr double kClipTolerance = 1e-9;

/// Scales g to norm at most C: g / max(1, ||g|| / C). The result never
/// exceeds C, even by one ulp.
inline GradRecord clip_gradient(const GradRecord& g, double clip) {
  if (g.scope != GradScope::PerExample)
    throw PrivacyError(
        "clipping requires per-example gradients; each contribution must be clipped "
        "individually, not the batch mean");
  if (!(clip > 0.0)) throw ParameterError("clip norm must be positive");
  const double norm = g.norm();
  if (!std::isfinite(norm)) throw NumericError("non-finite per-example gradient norm");
  if (norm <= clip) return g;
  GradRecord out = g;
  double factor = clip / norm;
  out.grads.scale(factor);
  while (out.norm() > clip) {
    factor = std::nextafter(factor, 0.0);
    out.grads = g.grads;
    out.grads.scale(factor);
  }
  return out;
}

inline std::vector<GradRecord> clip_per_example(std::span<const GradRecord> grads, double clip) {
  std::vector<GradRecord> out;
  out.reserve(grads.size());
  for (const auto& g : grads) out.push_back(clip_gradient(g, clip));
  return out;
}

/// Provenance of the Gaussian draw added by noisy_mean.
struct NoiseRecord {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t first_counter = 0;
  std::size_t coordinates = 0;
  double per_coordinate_variance = 0.0;  ///< C^2 sigma^2 / |B|^2
};

struct NoisyGrad {
  GradRecord gradient;  ///< batch-mean scope
  NoiseRecord noise;
};

/// (sum_i g_i + xi) / |B| with xi ~ N(0, C^2 sigma^2 I), drawn once per batch.
/// `clipped` may hold fewer or more than |B| entries (Poisson sampling); the
/// divisor is always the configured |B|. `layout` supplies parameter shapes
/// when the batch is empty.
inline NoisyGrad noisy_mean(std::span<const GradRecord> clipped, const PrivacyParams& params,
                            CounterRng& rng, const ParamSet* layout = nullptr) {
  params.validate();
  if (clipped.empty() && !layout)
    throw ParameterError("noisy_mean: empty batch needs a parameter layout");
  NoisyGrad out;
  out.gradient.scope = GradScope::BatchMean;
  const ParamSet* shape = clipped.empty() ? layout : &clipped.front().grads;
  out.gradient.grads = shape->zeros_like();
  ParamSet& sum = out.gradient.grads;
  for (const auto& g : clipped) {
    if (g.scope != GradScope::PerExample)
      throw PrivacyError("noisy_mean consumes per-example gradients only");
    if (g.norm() > params.clip + kClipTolerance)
      throw PrivacyError("noisy_mean: input gradient exceeds the clip norm");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += g.grads[k];
  }

  const double bsz = static_cast<double>(params.batch_size);
  out.noise.seed = rng.seed();
  out.noise.stream = rng.stream();
  out.noise.first_counter = rng.counter();
  out.noise.coordinates = sum.total_size();
  if (params.noise_multiplier > 0.0) {
    const double stddev = params.clip * params.noise_multiplier;
    for (auto& t : sum)
      for (auto& v : t.values()) v += stddev * rng.normal();
    out.noise.per_coordinate_variance = stddev * stddev / (bsz * bsz);
  }
  sum.scale(1.0 / bsz);
  return out;
}

namespace detail {
inline void require_batch_scope(const GradRecord& g, const char* op) {
  if (g.scope != GradScope::BatchMean)
    throw PrivacyError(std::string(op) + " expects a batch-mean gradient");
}
}  // namespace detail

/// theta <- theta - lr * g, in place.
inline void sgd_update(ParamSet& params, const GradRecord& g, double lr) {
  detail::require_batch_scope(g, "sgd_step");
  params.axpy(-lr, g.grads);
}

inline ParamSet sgd_step(ParamSet params, const NoisyGrad& g, double lr) {
  sgd_update(params, g.gradient, lr);
  return params;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  ///< added to sqrt(v_hat); 0 gives exact gradient-scale invariance
  bool bias_correction = true;
};

struct AdamState {
  AdamConfig config;
  ParamSet m;
  ParamSet v;
  std::uint64_t t = 0;

  static AdamState zeros(const ParamSet& like, AdamConfig config) {
    return AdamState{config, like.zeros_like(), like.zeros_like(), 0};
  }
};

/// One Adam update, in place:
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
///   p -= lr * m_hat / (sqrt(v_hat) + eps)
/// with m_hat, v_hat bias-corrected unless disabled.
inline void adam_update(ParamSet& params, AdamState& s, const GradRecord& g) {
  detail::require_batch_scope(g, "adam_step");
  params.require_layout(g.grads, "adam_step gradient");
  params.require_layout(s.m, "adam_step first moment");
  params.require_layout(s.v, "adam_step second moment");
  const AdamConfig& c = s.config;
  s.t += 1;
  const double mc = c.bias_correction ? 1.0 - std::pow(c.beta1, static_cast<double>(s.t)) : 1.0;
  const double vc = c.bias_correction ? 1.0 - std::pow(c.beta2, static_cast<double>(s.t)) : 1.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k].data();
    double* m = s.m[k].data();
    double* v = s.v[k].data();
    const double* gr = g.grads[k].data();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gr[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gr[i] * gr[i];
      assert(v[i] >= 0.0);
      const double denom = std::sqrt(v[i] / vc) + c.eps;
      if (denom > 0.0) p[i] -= c.lr * (m[i] / mc) / denom;
    }
  }
}

inline std::pair<ParamSet, AdamState> adam_step(ParamSet params, AdamState state,
                                                const NoisyGrad& g) {
  adam_update(params, state, g.gradient);
  return {std::move(params), std::move(state)};
}

struct SgdConfig {
  double lr = 1e-2;
};

/// Either plain SGD or Adam, applied to batch-mean gradients.
class Optimizer {
 public:
  Optimizer(SgdConfig c) : state_(c) {}
  Optimizer(AdamState s) : state_(std::move(s)) {}

  static Optimizer adam(const ParamSet& like, AdamConfig c) {
    return Optimizer(AdamState::zeros(like, c));
  }

  void step(ParamSet& params, const GradRecord& g) {
    if (auto* sgd = std::get_if<SgdConfig>(&state_))
      sgd_update(params, g, sgd->lr);
    else
      adam_update(params, std::get<AdamState>(state_), g);
  }

  bool is_adam() const { return std::holds_alternative<AdamState>(state_); }
  const AdamState* adam_state() const { return std::get_if<AdamState>(&state_); }

 private:
  std::variant<SgdConfig, AdamState> state_;
};

}  // namespace dplab
