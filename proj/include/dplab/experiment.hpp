#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dplab/accountant.hpp"
#include "dplab/checkpoint.hpp"
#include "dplab/classifier.hpp"
#include "dplab/config.hpp"
#include "dplab/dataset.hpp"
#include "dplab/gan.hpp"
#include "dplab/ledger.hpp"

namespace dplab {

/// Private training data: the first `subset` MNIST training images at the
/// configured side, scaled to [-1, 1].
inline LabeledImages prepare_training_data(const ExperimentConfig& cfg) {
  LabeledImages all = load_mnist(cfg.data_dir, true);
  if (cfg.subset > all.size())
    throw ConfigError("subset " + std::to_string(cfg.subset) + " exceeds the " +
                      std::to_string(all.size()) + " available training images");
  return downsample(subset(all, cfg.subset), cfg.image_side);
}

/// Public classifier data: training images [50000, 60000) (disjoint from any
/// private subset of at most 50000) and the test set for validation.
struct ClassifierData {
  LabeledImages train;
  LabeledImages test;
};

inline ClassifierData prepare_classifier_data(const std::string& data_dir, std::size_t side,
                                              std::size_t count = 10000) {
  LabeledImages all = load_mnist(data_dir, true);
  if (count == 0 || count > all.size()) throw ConfigError("classifier training size out of range");
  std::vector<std::size_t> idx;
  for (std::size_t i = all.size() - count; i < all.size(); ++i) idx.push_back(i);
  return {downsample(select(all, idx), side), downsample(load_mnist(data_dir, false), side)};
}

/// Loads `cfg.classifier` if set, else trains one on the public split and
/// saves it to `cache` (when non-empty) for reuse.
inline Classifier prepare_classifier(const ExperimentConfig& cfg, const std::string& cache,
                                     std::function<void(const std::string&)> log = {}) {
  if (!cfg.classifier.empty()) {
    Classifier c = load_classifier(cfg.classifier);
    if (c.side != cfg.image_side)
      throw ConfigError("classifier " + cfg.classifier + " expects side " + std::to_string(c.side));
    return c;
  }
  if (!cache.empty() && std::filesystem::exists(cache)) {
    Classifier c = load_classifier(cache);
    if (c.side == cfg.image_side) return c;
  }
  ClassifierData d = prepare_classifier_data(cfg.data_dir, cfg.image_side);
  ClassifierConfig cc;
  auto r = train_classifier(d.train, d.test, cfg.seed, cc);
  if (log) log("classifier trained: test accuracy " + format_double(r.validation_accuracy));
  if (!cache.empty()) {
    std::filesystem::create_directories(std::filesystem::path(cache).parent_path());
    save_classifier(cache, r.model, cc, r.validation_accuracy);
  }
  return r.model;
}

struct RunResult {
  std::vector<LedgerRow> ledger;
  GanModel model;
  AccountantState accountant;
  bool ok = true;
  std::string failure;
};

/// Callback for each ledger row as it is produced.
using RowCallback = std::function<void(const LedgerRow&)>;

/// Paths written by a run under `cfg.out`.
struct RunFiles {
  std::string dir;
  std::string ledger() const { return dir + "/ledger.csv"; }
  std::string checkpoint() const { return dir + "/checkpoint.bin"; }
  std::string metadata() const { return dir + "/run.json"; }
};

namespace detail {

inline void check_finite(double v, const char* what, std::uint64_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " is not finite at step " + std::to_string(step));
}

}  // namespace detail

/// DP-WGAN-GP training: `steps` private critic updates, one non-private
/// generator update after every `n_critic` of them. Each critic update is
/// one sampled-Gaussian release charged to the accountant. The generator is
/// scored on a fixed latent sample at step 0, every `eval_every` critic
/// steps and at the end. Files are written when `write_files` is set.
inline RunResult run_experiment(const ExperimentConfig& cfg, const LabeledImages& data,
                                const Classifier& classifier, const RowCallback& on_row = {},
                                bool write_files = true) {
  cfg.validate();
  if (data.size() < cfg.batch_size) throw ConfigError("batch-size exceeds the dataset size");
  if (data.side() != cfg.image_side) throw ConfigError("data side does not match image-side");
  if (classifier.side != cfg.image_side)
    throw ConfigError("classifier side does not match image-side");

  const auto t0 = std::chrono::steady_clock::now();
  RunFiles files{cfg.out};
  std::unique_ptr<LedgerWriter> writer;
  if (write_files) {
    std::filesystem::create_directories(cfg.out);
    writer = std::make_unique<LedgerWriter>(files.ledger());
  }

  RunResult res;
  res.model = build_models(cfg.capacity, cfg.latent_dim, cfg.image_side, cfg.seed);
  GanModel& m = res.model;
  PrivacyParams privacy{cfg.clip, cfg.noise_multiplier, cfg.batch_size, data.size(), cfg.delta};
  Accountant accountant(privacy.sampling_rate(), privacy.noise_multiplier);
  GpConfig gp{cfg.lambda_gp, cfg.n_critic, cfg.lr, cfg.batch_size};
  GpConfig gen_gp = gp;
  gen_gp.lr = cfg.gen_lr;
  Optimizer critic_opt = Optimizer::adam(m.critic_params, {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, true});
  Optimizer gen_opt = Optimizer::adam(m.gen_params, {cfg.gen_lr, cfg.beta1, cfg.beta2, 1e-8, true});
  BatchSampler sampler(cfg.sampling, data.size(), cfg.batch_size, cfg.seed);
  LatentSampler critic_z(cfg.seed, cfg.latent_dim, 201), gen_z(cfg.seed, cfg.latent_dim, 202);
  CounterRng rho_rng(cfg.seed, 211), noise_rng(cfg.seed, 212);
  const Tensor eval_latents = LatentSampler(cfg.seed, cfg.latent_dim, 203).sample(cfg.eval_samples);

  double critic_loss = NAN, gen_loss = NAN;
  auto record = [&](std::uint64_t step) {
    LedgerRow r;
    r.step = step;
    const EpsilonDelta e = accountant.epsilon(cfg.delta);
    if (privacy.noise_multiplier > 0.0 && !std::isfinite(e.epsilon))
      throw NumericError("accountant overflow at step " + std::to_string(step));
    r.alpha_star = e.alpha_star;
    r.rdp_eps = e.rdp_at_alpha_star;
    r.epsilon = e.epsilon;
    r.delta = cfg.delta;
    r.critic_loss = critic_loss;
    r.gen_loss = gen_loss;
    const IsResult is = inception_score(classifier, forward(m.generator, m.gen_params, eval_latents),
                                        cfg.is_splits);
    r.is_mean = is.mean;
    r.is_std = is.std;
    if (cfg.record_wall_time)
      r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.ledger.push_back(r);
    if (writer) writer->append(r);
    if (on_row) on_row(r);
  };

  try {
    record(0);
    std::vector<Tensor> batch;
    for (std::uint64_t t = 1; t <= cfg.steps; ++t) {
      batch.clear();
      for (std::size_t i : sampler.next()) batch.push_back(data.image(i));
      CriticStepReport rep =
          dp_critic_step(m, batch, critic_z, privacy, gp, critic_opt, rho_rng, noise_rng);
      accountant.charge(rep.charge.steps);
      if (rep.examples > 0) {
        critic_loss = rep.mean_loss;
        detail::check_finite(critic_loss, "critic loss", t);
      }
      if (!m.critic_params.all_finite()) throw NumericError("critic parameters diverged at step " + std::to_string(t));
      if (t % cfg.n_critic == 0) {
        gen_loss = generator_step(m, gen_z, gen_gp, gen_opt, cfg.objective);
        detail::check_finite(gen_loss, "generator loss", t);
        if (!m.gen_params.all_finite()) throw NumericError("generator parameters diverged at step " + std::to_string(t));
      }
      if (t % cfg.eval_every == 0 || t == cfg.steps) record(t);
    }
  } catch (const Error& e) {
    res.ok = false;
    res.failure = e.what();
  }

  res.accountant = {accountant.steps(), privacy.sampling_rate(), privacy.noise_multiplier,
                    privacy.clip, cfg.delta};
  if (write_files) {
    if (res.ok) save_gan(files.checkpoint(), m, res.accountant);
    Json meta;
    meta["status"] = res.ok ? "ok" : "failed";
    if (!res.ok) meta["failure"] = res.failure;
    meta["config"] = Json::object();
    for (const auto& [k, v] : config_entries(cfg)) meta["config"][k] = v;
    meta["dataset_size"] = data.size();
    meta["accountant"] = to_json(res.accountant);
    meta["defaults_note"] =
        "training length, learning rates, Adam betas and evaluation cadence are desk-scale "
        "choices, not values from a reference protocol";
    meta["hyperparameter_search_accounted"] = false;
    std::ofstream(files.metadata(), std::ios::trunc) << meta.dump(2) << '\n';
  }
  return res;
}

}  // namespace dplab
