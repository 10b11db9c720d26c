#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dplab/dp_optim.hpp"
#include "dplab/engine.hpp"
#include "dplab/error.hpp"
#include "dplab/rng.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

inline constexpr std::size_t kSupportedSides[] = {8, 16, 28};

inline void require_supported_side(std::size_t side) {
  for (auto s : kSupportedSides)
    if (s == side) return;
  throw ParameterError("unsupported image side " + std::to_string(side) +
                       "; supported sides are 8, 16, 28");
}

struct GanArchitecture {
  std::size_t capacity = 32;  ///< filters of the first critic convolution
  std::size_t latent_dim = 128;
  std::size_t image_side = 28;
  double leaky_slope = 0.2;
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t pad = 2;
};

/// Generator/critic pair. Parameter names are disjoint ("generator.*",
/// "critic.*") so both sets can share one checkpoint.
struct GanModel {
  GanArchitecture arch;
  Sequential generator;
  Sequential critic;
  ParamSet gen_params;
  ParamSet critic_params;
};

/// Three stride-2 convolutions with leaky ReLU, filters (c, 2c, 4c), then a
/// dense scalar head. No normalization layers: examples stay independent.
inline Sequential build_critic(const GanArchitecture& a) {
  require_supported_side(a.image_side);
  if (a.capacity == 0) throw ParameterError("capacity must be at least 1");
  Sequential d({1, a.image_side, a.image_side});
  d.conv2d(a.capacity, a.kernel, a.stride, a.pad, "critic.conv1").leaky_relu(a.leaky_slope, "critic.act1")
      .conv2d(2 * a.capacity, a.kernel, a.stride, a.pad, "critic.conv2").leaky_relu(a.leaky_slope, "critic.act2")
      .conv2d(4 * a.capacity, a.kernel, a.stride, a.pad, "critic.conv3").leaky_relu(a.leaky_slope, "critic.act3")
      .flatten("critic.flatten").dense(1, "critic.head");
  return d;
}

/// Dense projection of the latent to the critic's last feature map, then
/// three transposed convolutions mirroring the critic, tanh output.
inline Sequential build_generator(const GanArchitecture& a) {
  const Sequential critic = build_critic(a);
  // shapes()[k] is the input of critic layer k: conv1 at 0, conv2 at 2, conv3 at 4.
  const Shape& s0 = critic.shapes()[0];
  const Shape& s1 = critic.shapes()[2];
  const Shape& s2 = critic.shapes()[4];
  const Shape& s3 = critic.shapes()[6];
  const auto out_pad = [&](std::size_t in, std::size_t target) {
    const std::size_t base = (in - 1) * a.stride + a.kernel - 2 * a.pad;
    return target - base;
  };
  if (a.latent_dim == 0) throw ParameterError("latent dimension must be positive");
  Sequential g({a.latent_dim});
  g.dense(shape_size(s3), "generator.fc").leaky_relu(a.leaky_slope, "generator.act0")
      .reshape(s3, "generator.reshape")
      .conv_transpose2d(s2[0], a.kernel, a.stride, a.pad, out_pad(s3[1], s2[1]), "generator.deconv1")
      .leaky_relu(a.leaky_slope, "generator.act1")
      .conv_transpose2d(s1[0], a.kernel, a.stride, a.pad, out_pad(s2[1], s1[1]), "generator.deconv2")
      .leaky_relu(a.leaky_slope, "generator.act2")
      .conv_transpose2d(s0[0], a.kernel, a.stride, a.pad, out_pad(s1[1], s0[1]), "generator.deconv3")
      .tanh("generator.out");
  return g;
}

inline GanModel build_models(std::size_t capacity, std::size_t latent_dim, std::size_t image_side,
                             std::uint64_t seed) {
  GanArchitecture a;
  a.capacity = capacity;
  a.latent_dim = latent_dim;
  a.image_side = image_side;
  GanModel m{a, build_generator(a), build_critic(a), {}, {}};
  CounterRng gen_rng(seed, 101), critic_rng(seed, 102);
  m.gen_params = m.generator.init_params(gen_rng);
  m.critic_params = m.critic.init_params(critic_rng);
  return m;
}

struct GpConfig {
  double lambda = 10.0;
  std::size_t n_critic = 5;
  double lr = 1e-3;
  std::size_t batch_size = 64;

  void validate() const {
    if (!(lambda > 0.0)) throw ParameterError("gradient penalty weight must be positive");
    if (n_critic == 0) throw ParameterError("n_critic must be positive");
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (batch_size == 0) throw ParameterError("batch size must be positive");
  }
};

/// Reproducible i.i.d. standard-normal latent draws.
class LatentSampler {
 public:
  LatentSampler(std::uint64_t seed, std::size_t latent_dim, std::uint64_t stream = 201)
      : rng_(seed, stream), dim_(latent_dim) {}

  std::size_t latent_dim() const { return dim_; }

  /// (n, latent_dim)
  Tensor sample(std::size_t n) {
    Tensor z({n, dim_});
    for (auto& v : z.values()) v = rng_.normal();
    return z;
  }

 private:
  CounterRng rng_;
  std::size_t dim_;
};

/// Sign of the generator update. Standard ascends mean D(G(z)), the usual
/// WGAN objective for a critic that scores real data high; Literal descends it.
enum class GeneratorObjective { Standard, Literal };

struct CriticExampleResult {
  double loss = 0.0;     ///< D(fake) - D(real) + lambda * penalty
  double penalty = 0.0;  ///< (||grad_y D(y)|| - 1)^2
  GradRecord grad;       ///< per-example gradient over critic parameters
};

/// y = rho * real + (1 - rho) * fake
inline Tensor interpolate(const Tensor& real, const Tensor& fake, double rho) {
  if (real.shape() != fake.shape()) throw ShapeError("interpolate", real.shape(), fake.shape());
  Tensor y = real;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rho * real[i] + (1.0 - rho) * fake[i];
  return y;
}

/// Per-example critic loss and its gradient over the critic parameters, for
/// one real image, one generated image and one interpolation weight. Both
/// images are (1, 1, side, side).
inline CriticExampleResult critic_loss_and_grad(const Sequential& critic, const ParamSet& w,
                                                const Tensor& real, const Tensor& fake, double rho,
                                                double lambda) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ParameterError("interpolation weight must lie in [0, 1]");
  CriticExampleResult r;
  r.grad = GradRecord{critic.zero_params(), GradScope::PerExample};
  const Trace tf = trace(critic, w, fake);
  const Trace tr = trace(critic, w, real);
  const Shape& os = tf.output().shape();
  backward(critic, w, tf, Tensor(os, 1.0), &r.grad.grads);
  backward(critic, w, tr, Tensor(os, -1.0), &r.grad.grads);
  PenaltyGrad pg = grad_of_grad_norm(critic, w, interpolate(real, fake, rho));
  r.grad.grads.axpy(lambda, pg.grad.grads);
  r.penalty = pg.penalty;
  r.loss = tf.output().item() - tr.output().item() + lambda * pg.penalty;
  return r;
}

/// Scalar per-example critic loss with z mapped through the generator.
inline double critic_loss_per_example(const GanModel& m, const Tensor& real, const Tensor& z,
                                      double rho, double lambda) {
  const Tensor zs = z.rank() == 1 ? z.reshaped({1, z.size()}) : z;
  const Tensor xs = real.rank() == 3 ? real.reshaped(detail::batched(1, real.shape())) : real;
  const Tensor fake = forward(m.generator, m.gen_params, zs);
  const Tensor y = interpolate(xs, fake, rho);
  const Tensor u = input_grad(m.critic, m.critic_params, y);
  const double n = std::sqrt(u.squared_norm());
  const double penalty = n < kGradNormFloor ? 1.0 : (n - 1.0) * (n - 1.0);
  return forward(m.critic, m.critic_params, fake).item() -
         forward(m.critic, m.critic_params, xs).item() + lambda * penalty;
}

/// One sampled-Gaussian step to be charged to the accountant.
struct PrivacyCharge {
  double sampling_rate = 0.0;
  double noise_multiplier = 0.0;
  std::uint64_t steps = 0;
};

struct CriticStepReport {
  double mean_loss = 0.0;
  double mean_penalty = 0.0;
  std::size_t examples = 0;
  std::vector<double> raw_norms;      ///< per-example gradient norms before clipping
  std::vector<double> clipped_norms;  ///< after clipping, each <= C
  PrivacyCharge charge;
};

/// Differentially private critic update: per-example gradients of the
/// critic loss are clipped to C, summed with Gaussian noise, divided by |B|
/// and applied with `optimizer`. Emits exactly one accountant charge.
/// `batch` holds the sampled private examples, each (1, 1, side, side); it may
/// be empty under Poisson sampling. `rho_rng` supplies interpolation weights,
/// `noise_rng` the Gaussian draw.
inline CriticStepReport dp_critic_step(GanModel& m, std::span<const Tensor> batch,
                                       LatentSampler& sampler,
                                       const PrivacyParams& privacy, const GpConfig& gp,
                                       Optimizer& optimizer, CounterRng& rho_rng,
                                       CounterRng& noise_rng) {
  privacy.validate();
  gp.validate();
  CriticStepReport rep;
  const std::size_t n = batch.size();
  rep.examples = n;
  std::vector<GradRecord> clipped;
  clipped.reserve(n);
  if (n > 0) {
    const Tensor fakes = forward(m.generator, m.gen_params, sampler.sample(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double rho = rho_rng.uniform();
      CriticExampleResult r = critic_loss_and_grad(m.critic, m.critic_params, batch[i],
                                                   fakes.row(i), rho, gp.lambda);
      rep.mean_loss += r.loss / static_cast<double>(n);
      rep.mean_penalty += r.penalty / static_cast<double>(n);
      rep.raw_norms.push_back(r.grad.norm());
      clipped.push_back(clip_gradient(r.grad, privacy.clip));
      rep.clipped_norms.push_back(clipped.back().norm());
    }
  }
  NoisyGrad g = noisy_mean(clipped, privacy, noise_rng, &m.critic_params);
  optimizer.step(m.critic_params, g.gradient);
  rep.charge = {privacy.sampling_rate(), privacy.noise_multiplier, 1};
  return rep;
}

/// Non-private generator update from latent draws only:
///   g = sign * (1/|B|) sum_i grad_theta D(G(z_i)),  theta <- optimizer(theta, g)
/// with sign +1 for the literal objective and -1 for the standard one. The
/// critic is read, never updated. Returns the minimized objective,
/// sign * mean D(G(z)).
inline double generator_step(GanModel& m, LatentSampler& sampler, const GpConfig& gp,
                             Optimizer& optimizer,
                             GeneratorObjective objective = GeneratorObjective::Standard) {
  gp.validate();
  const std::size_t n = gp.batch_size;
  const Trace tg = trace(m.generator, m.gen_params, sampler.sample(n));
  const Trace td = trace(m.critic, m.critic_params, tg.output());
  const double sign = objective == GeneratorObjective::Literal ? 1.0 : -1.0;
  const Tensor gd = backward(m.critic, m.critic_params, td,
                             Tensor(td.output().shape(), sign / static_cast<double>(n)), nullptr);
  GradRecord g{m.generator.zero_params(), GradScope::BatchMean};
  backward(m.generator, m.gen_params, tg, gd, &g.grads);
  optimizer.step(m.gen_params, g);
  return sign * td.output().sum() / static_cast<double>(n);
}

}  // namespace dplab
