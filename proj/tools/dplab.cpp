// dplab: command-line front end for training, sweeps and privacy accounting.
//
// Exit codes: 0 success, 2 configuration error, 3 run failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "dplab/accountant.hpp"
#include "dplab/checkpoint.hpp"
#include "dplab/classifier.hpp"
#include "dplab/config.hpp"
#include "dplab/experiment.hpp"
#include "dplab/sweep.hpp"

#ifndef DPLAB_MNIST_DIR
#define DPLAB_MNIST_DIR "data/mnist"
#endif

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRun = 3;

struct RunFailure : dplab::Error {
  using dplab::Error::Error;
};

const std::map<std::string, std::string> kHelp = {
    {"data-dir", "directory holding the MNIST IDX files"},
    {"image-side", "image side after downsampling: 8, 16 or 28"},
    {"subset", "number of private training images"},
    {"capacity", "filters of the first critic convolution"},
    {"latent-dim", "generator latent dimension"},
    {"clip", "per-example gradient L2 bound C (inf only with sigma 0)"},
    {"noise-multiplier", "noise multiplier sigma (0 disables privacy)"},
    {"batch-size", "expected batch size |B|"},
    {"steps", "private critic steps T"},
    {"n-critic", "critic steps per generator step"},
    {"lambda-gp", "gradient penalty weight"},
    {"lr", "critic Adam learning rate"},
    {"gen-lr", "generator Adam learning rate"},
    {"beta1", "Adam beta1"},
    {"beta2", "Adam beta2"},
    {"delta", "target delta"},
    {"seed", "master seed"},
    {"eval-every", "critic steps between inception score evaluations"},
    {"eval-samples", "generated images per evaluation"},
    {"is-splits", "inception score splits"},
    {"out", "output directory"},
    {"classifier", "classifier checkpoint (trained and cached when omitted)"},
    {"sampling", "poisson or shuffle"},
    {"generator-objective", "standard (ascend critic score) or literal (descend)"},
    {"record-wall-time", "write elapsed seconds to the ledger (breaks byte-identical reruns)"},
};

/// Registers one --key option per configuration key; values land in `into`.
void add_config_flags(CLI::App* cmd, std::map<std::string, std::string>& into) {
  for (const auto& [key, value] : dplab::config_entries(dplab::ExperimentConfig{})) {
    auto it = kHelp.find(key);
    cmd->add_option("--" + key, into[key], it == kHelp.end() ? "" : it->second);
  }
}

dplab::ConfigEntries flag_entries(CLI::App* cmd, const std::map<std::string, std::string>& flags) {
  dplab::ConfigEntries out;
  for (const auto& [k, v] : flags)
    if (cmd->count("--" + k) > 0) out.emplace_back(k, v);
  return out;
}

void log(const std::string& m) { std::cerr << m << std::endl; }

void print_row(const dplab::LedgerRow& r) {
  std::fprintf(stderr, "step %6llu  eps %-10.4g alpha* %3d  critic %-10.4g gen %-10.4g IS %.4f +- %.4f\n",
               static_cast<unsigned long long>(r.step), r.epsilon, r.alpha_star, r.critic_loss,
               r.gen_loss, r.is_mean, r.is_std);
}

std::string classifier_cache(const dplab::ExperimentConfig& cfg) {
  return (std::filesystem::path(cfg.out) / ("classifier_side" + std::to_string(cfg.image_side) +
                                            "_seed" + std::to_string(cfg.seed) + ".bin"))
      .string();
}

int cmd_train(CLI::App* cmd, const std::string& config_file,
              const std::map<std::string, std::string>& flags) {
  dplab::ExperimentConfig cfg;
  cfg.data_dir = DPLAB_MNIST_DIR;
  if (!config_file.empty()) dplab::apply_config(cfg, dplab::read_config_file(config_file));
  dplab::apply_config(cfg, flag_entries(cmd, flags));
  cfg.validate();
  dplab::LabeledImages data = dplab::prepare_training_data(cfg);
  dplab::Classifier clf = dplab::prepare_classifier(cfg, classifier_cache(cfg), log);
  dplab::RunResult r = dplab::run_experiment(cfg, data, clf, print_row);
  if (!r.ok) throw RunFailure("run failed: " + r.failure);
  log("ledger: " + dplab::RunFiles{cfg.out}.ledger());
  return 0;
}

int cmd_sweep(CLI::App* cmd, const std::string& config_file,
              const std::map<std::string, std::string>& flags) {
  dplab::SweepConfig s;
  s.base.data_dir = DPLAB_MNIST_DIR;
  if (!config_file.empty()) dplab::apply_sweep_config(s, dplab::read_config_file(config_file));
  dplab::apply_sweep_config(s, flag_entries(cmd, flags));
  auto runs = dplab::expand_sweep(s);
  for (const auto& r : runs) r.config.validate();
  s.base.validate();
  dplab::LabeledImages data = dplab::prepare_training_data(s.base);
  dplab::Classifier clf = dplab::prepare_classifier(s.base, classifier_cache(s.base), log);
  bool all_ok = true;
  dplab::run_sweep(s, data, clf, [&](const dplab::SweepRun& r) {
    all_ok = all_ok && r.ok;
    const auto& last = r.ledger.empty() ? dplab::LedgerRow{} : r.ledger.back();
    std::fprintf(stderr, "%s  %s  final eps %.4g  IS %.4f%s%s\n", r.ok ? "ok    " : "FAILED",
                 r.config.out.c_str(), last.epsilon, last.is_mean, r.ok ? "" : "  ",
                 r.failure.c_str());
  });
  log("combined: " + s.base.out + "/sweep.csv");
  if (!all_ok) throw RunFailure("one or more sweep runs failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private GAN training laboratory"};
  app.require_subcommand(1);

  std::string config_file;
  std::map<std::string, std::string> train_flags, sweep_flags;

  auto* train = app.add_subcommand("train", "run one DP-WGAN-GP experiment");
  train->add_option("--config", config_file, "flat key = value configuration file");
  add_config_flags(train, train_flags);

  auto* sweep = app.add_subcommand("sweep", "run a grid over clip, noise multiplier and capacity");
  sweep->add_option("--config", config_file, "configuration file with sweep-* list keys");
  add_config_flags(sweep, sweep_flags);
  sweep->add_option("--sweep-clip", sweep_flags["sweep-clip"], "comma-separated clip norms");
  sweep->add_option("--sweep-noise-multiplier", sweep_flags["sweep-noise-multiplier"],
                    "comma-separated noise multipliers");
  sweep->add_option("--sweep-capacity", sweep_flags["sweep-capacity"], "comma-separated capacities");
  sweep->add_option("--baseline", sweep_flags["baseline"], "add non-private baseline runs (true/false)");

  auto* eps = app.add_subcommand("epsilon", "privacy spent by T steps of the sampled Gaussian mechanism");
  std::uint64_t e_steps = 0;
  std::size_t e_batch = 64, e_n = 60000;
  double e_sigma = 1.0, e_delta = 1e-5;
  eps->add_option("--steps", e_steps, "number of steps T")->required();
  eps->add_option("--batch-size", e_batch, "expected batch size");
  eps->add_option("--dataset-size", e_n, "dataset size n");
  eps->add_option("--noise-multiplier", e_sigma, "noise multiplier sigma");
  eps->add_option("--delta", e_delta, "target delta");

  auto* tc = app.add_subcommand("train-classifier", "train the inception-score classifier");
  std::string tc_dir = DPLAB_MNIST_DIR, tc_out = "classifier.bin";
  std::size_t tc_side = 28, tc_count = 10000, tc_epochs = 5;
  std::uint64_t tc_seed = 1;
  tc->add_option("--data-dir", tc_dir, "directory holding the MNIST IDX files");
  tc->add_option("--image-side", tc_side, "8, 16 or 28");
  tc->add_option("--train-size", tc_count, "training images taken from the end of the train set");
  tc->add_option("--epochs", tc_epochs, "training epochs");
  tc->add_option("--seed", tc_seed, "seed");
  tc->add_option("--out", tc_out, "checkpoint path");

  auto* score = app.add_subcommand("score", "inception score of a generator checkpoint");
  std::string sc_ckpt, sc_clf;
  std::size_t sc_samples = 2048, sc_splits = 10;
  std::uint64_t sc_seed = 1;
  score->add_option("--checkpoint", sc_ckpt, "generator checkpoint")->required();
  score->add_option("--classifier", sc_clf, "classifier checkpoint")->required();
  score->add_option("--samples", sc_samples, "generated images");
  score->add_option("--splits", sc_splits, "inception score splits");
  score->add_option("--seed", sc_seed, "latent seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train, config_file, train_flags);
    if (*sweep) return cmd_sweep(sweep, config_file, sweep_flags);
    if (*eps) {
      dplab::PrivacyParams p{1.0, e_sigma, e_batch, e_n, e_delta};
      p.validate();
      dplab::Accountant acc(p.sampling_rate(), e_sigma);
      acc.charge(e_steps);
      const auto e = acc.epsilon(e_delta);
      std::printf("q=%.17g sigma=%.17g steps=%llu delta=%.17g\nepsilon=%.17g alpha_star=%d rdp_eps=%.17g\n",
                  p.sampling_rate(), e_sigma, static_cast<unsigned long long>(e_steps), e_delta,
                  e.epsilon, e.alpha_star, e.rdp_at_alpha_star);
      return 0;
    }
    if (*tc) {
      dplab::ClassifierData d = dplab::prepare_classifier_data(tc_dir, tc_side, tc_count);
      dplab::ClassifierConfig cc;
      cc.epochs = tc_epochs;
      auto r = dplab::train_classifier(d.train, d.test, tc_seed, cc);
      dplab::save_classifier(tc_out, r.model, cc, r.validation_accuracy);
      std::printf("test_accuracy=%.6f\n", r.validation_accuracy);
      return 0;
    }
    if (*score) {
      dplab::LoadedGan g = dplab::load_gan(sc_ckpt);
      dplab::Classifier c = dplab::load_classifier(sc_clf);
      const dplab::Tensor z = dplab::LatentSampler(sc_seed, g.model.arch.latent_dim, 203).sample(sc_samples);
      const auto is = dplab::inception_score(
          c, dplab::forward(g.model.generator, g.model.gen_params, z), sc_splits);
      const auto& a = g.accountant;
      std::printf("is_mean=%.17g is_std=%.17g\n", is.mean, is.std);
      if (a.noise_multiplier > 0.0) {
        dplab::Accountant acc(a.sampling_rate, a.noise_multiplier);
        acc.charge(a.steps);
        std::printf("epsilon=%.17g delta=%.17g steps=%llu\n", acc.epsilon(a.delta).epsilon, a.delta,
                    static_cast<unsigned long long>(a.steps));
      } else {
        std::printf("epsilon=inf (no noise)\n");
      }
      return 0;
    }
  } catch (const dplab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dplab::ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRun;
  }
  return 0;
}
