#include <gtest/gtest.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "dplab/checkpoint.hpp"
#include "dplab/config.hpp"
#include "dplab/experiment.hpp"
#include "dplab/ledger.hpp"
#include "dplab/sweep.hpp"
#include "eval_fixtures.hpp"

using namespace dplab;
using namespace dplab::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dplab_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

const Classifier& tiny_classifier() {
  static const Classifier c = [] {
    ClassifierConfig cfg;
    cfg.epochs = 2;
    cfg.conv1 = 4;
    cfg.conv2 = 8;
    cfg.hidden = 16;
    cfg.batch_size = 32;
    LabeledImages d = synthetic_classes(200, 8, 10, 1);
    return train_classifier(d, d, 1, cfg).model;
  }();
  return c;
}

ExperimentConfig smoke_config(const fs::path& out) {
  ExperimentConfig c;
  c.image_side = 8;
  c.subset = 64;
  c.capacity = 2;
  c.latent_dim = 8;
  c.batch_size = 16;
  c.steps = 10;
  c.n_critic = 2;
  c.eval_every = 5;
  c.eval_samples = 200;
  c.out = out.string();
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  fs::path dir = scratch("ckpt");
  GanModel m = build_models(3, 5, 8, 4);
  m.critic_params[0][0] = -0.0;
  m.critic_params[0][1] = 1e-310;
  AccountantState acc{123, 0.016, 0.8, 1.5, 1e-5};
  save_gan((dir / "g.bin").string(), m, acc);
  LoadedGan back = load_gan((dir / "g.bin").string());
  ASSERT_EQ(back.model.gen_params.size(), m.gen_params.size());
  const auto a = m.critic_params.flatten(), b = back.model.critic_params.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(same_bits(a[i], b[i])) << i;
  EXPECT_EQ(back.model.gen_params, m.gen_params);
  EXPECT_EQ(back.model.arch.capacity, 3u);
  EXPECT_EQ(back.accountant.steps, 123u);
  EXPECT_EQ(back.accountant.noise_multiplier, 0.8);
  EXPECT_EQ(back.accountant.clip, 1.5);
  const auto size = fs::file_size(dir / "g.bin");
  EXPECT_EQ(size, 24 + 8 * (m.gen_params.flatten().size() + a.size()));
}

TEST(Checkpoint, LittleEndianValuesAfterHeader) {
  fs::path dir = scratch("ckpt_le");
  ParamSet p;
  p.add("x", Tensor({2}, {1.0, -2.0}));
  save_params((dir / "p.bin").string(), p, Json::object());
  const std::string raw = slurp(dir / "p.bin");
  ASSERT_EQ(raw.size(), 40u);
  EXPECT_EQ(raw.substr(0, 8), "DPLABCKP");
  EXPECT_EQ(static_cast<unsigned char>(raw[8]), kCheckpointVersion);
  // 1.0 = 0x3FF0000000000000, stored low byte first.
  EXPECT_EQ(static_cast<unsigned char>(raw[24 + 7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(raw[24 + 6]), 0xF0);
}

TEST(Checkpoint, CorruptFilesRejected) {
  fs::path dir = scratch("ckpt_bad");
  ParamSet p;
  p.add("x", Tensor({3}, {1.0, 2.0, 3.0}));
  const std::string path = (dir / "p.bin").string();
  save_params(path, p, {{"kind", "other"}});
  EXPECT_THROW(load_gan(path), CheckpointError);
  EXPECT_THROW(load_classifier(path), CheckpointError);
  fs::resize_file(path, 30);
  EXPECT_THROW(load_params(path), CheckpointError);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << "not a checkpoint at all, no";
  EXPECT_THROW(load_params(path), CheckpointError);
  EXPECT_THROW(load_params((dir / "absent.bin").string()), CheckpointError);
}

TEST(Checkpoint, ClassifierRoundTrip) {
  fs::path dir = scratch("ckpt_clf");
  const Classifier& c = tiny_classifier();
  ClassifierConfig cfg;
  cfg.conv1 = 4;
  cfg.conv2 = 8;
  cfg.hidden = 16;
  save_classifier((dir / "c.bin").string(), c, cfg, 0.5);
  Classifier back = load_classifier((dir / "c.bin").string());
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.side, 8u);
}

TEST(Ledger, ReadBackIsLossless) {
  fs::path dir = scratch("ledger");
  CounterRng rng(5);
  std::vector<LedgerRow> rows;
  for (std::uint64_t s = 0; s < 50; ++s) {
    LedgerRow r;
    r.step = s * 7;
    r.alpha_star = static_cast<int>(2 + s);
    r.rdp_eps = rng.uniform() * 1e-3;
    r.epsilon = std::exp(30.0 * rng.normal());
    r.delta = 1e-5;
    r.critic_loss = s == 0 ? NAN : rng.normal();
    r.gen_loss = -rng.normal() / 3.0;
    r.is_mean = 1.0 + rng.uniform();
    r.is_std = 0.1 / 3.0;
    r.wall_s = s == 3 ? INFINITY : 0.0;
    rows.push_back(r);
  }
  {
    LedgerWriter w((dir / "l.csv").string());
    for (const auto& r : rows) w.append(r);
  }
  EXPECT_EQ(slurp(dir / "l.csv").substr(0, std::strlen(kLedgerHeader)), kLedgerHeader);
  auto back = read_ledger((dir / "l.csv").string());
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].step, rows[i].step);
    EXPECT_EQ(back[i].alpha_star, rows[i].alpha_star);
    for (auto f : {&LedgerRow::rdp_eps, &LedgerRow::epsilon, &LedgerRow::delta,
                   &LedgerRow::gen_loss, &LedgerRow::is_mean, &LedgerRow::is_std, &LedgerRow::wall_s})
      EXPECT_TRUE(same_bits(back[i].*f, rows[i].*f)) << i;
    EXPECT_EQ(std::isnan(back[i].critic_loss), std::isnan(rows[i].critic_loss));
    if (!std::isnan(rows[i].critic_loss)) EXPECT_TRUE(same_bits(back[i].critic_loss, rows[i].critic_loss));
  }
}

TEST(Config, ParsesFlatKeyValues) {
  ExperimentConfig c;
  apply_config(c, parse_config_text("# desk run\n clip = 0.5 \nnoise-multiplier=1.2 # trailing\n\n"
                                    "capacity = 16\nsampling = shuffle\nout = runs/x\n"));
  EXPECT_EQ(c.clip, 0.5);
  EXPECT_EQ(c.noise_multiplier, 1.2);
  EXPECT_EQ(c.capacity, 16u);
  EXPECT_EQ(c.sampling, SamplingScheme::Shuffle);
  EXPECT_EQ(c.out, "runs/x");
}

TEST(Config, RoundTripsThroughText) {
  ExperimentConfig c;
  c.clip = 0.1;
  c.lr = 3e-4;
  c.objective = GeneratorObjective::Literal;
  c.clip = INFINITY;
  c.noise_multiplier = 0.0;
  ExperimentConfig d;
  apply_config(d, parse_config_text(format_config(c)));
  EXPECT_EQ(format_config(d), format_config(c));
  EXPECT_NO_THROW(d.validate());
}

TEST(Config, Errors) {
  ExperimentConfig c;
  EXPECT_THROW(apply_config(c, parse_config_text("colour = red")), ConfigError);
  EXPECT_THROW(parse_config_text("clip = 1\nclip = 2"), ConfigError);
  EXPECT_THROW(parse_config_text("just words"), ConfigError);
  EXPECT_THROW(apply_config(c, parse_config_text("steps = -3")), ConfigError);
  EXPECT_THROW(apply_config(c, parse_config_text("clip = fast")), ConfigError);
  EXPECT_THROW(apply_config(c, parse_config_text("sampling = sometimes")), ConfigError);
  try {
    apply_config(c, parse_config_text("batch-size = 1.5"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch-size"), std::string::npos);
  }
  ExperimentConfig v;
  v.image_side = 10;
  EXPECT_THROW(v.validate(), ConfigError);
  v = ExperimentConfig{};
  v.batch_size = v.subset + 1;
  EXPECT_THROW(v.validate(), ConfigError);
  v = ExperimentConfig{};
  v.clip = INFINITY;
  EXPECT_THROW(v.validate(), ConfigError);
}

TEST(Experiment, SmokeConfigCompletesQuickly) {
  fs::path out = scratch("smoke");
  const auto t0 = std::chrono::steady_clock::now();
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  RunResult r = run_experiment(smoke_config(out), data, tiny_classifier());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_TRUE(r.ok) << r.failure;
  EXPECT_LT(secs, 60.0);
  ASSERT_EQ(r.ledger.size(), 3u);
  EXPECT_EQ(r.ledger[0].step, 0u);
  EXPECT_EQ(r.ledger[2].step, 10u);
  EXPECT_EQ(r.accountant.steps, 10u);
  EXPECT_TRUE(fs::exists(out / "ledger.csv"));
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin.json"));
  EXPECT_TRUE(fs::exists(out / "run.json"));
}

TEST(Experiment, LedgerEpsilonMatchesOfflineRecomputation) {
  fs::path out = scratch("offline");
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  ExperimentConfig cfg = smoke_config(out);
  RunResult r = run_experiment(cfg, data, tiny_classifier());
  ASSERT_TRUE(r.ok);
  const double q = 16.0 / 64.0;
  double prev = 0.0;
  for (const auto& row : read_ledger((out / "ledger.csv").string())) {
    const EpsilonDelta e = to_epsilon_delta(compose(RdpCurve::zeros(), row.step, q, 0.8), 1e-5);
    EXPECT_EQ(row.epsilon, e.epsilon);
    EXPECT_EQ(row.alpha_star, e.alpha_star);
    EXPECT_GE(row.epsilon, prev);
    prev = row.epsilon;
  }
}

TEST(Experiment, ByteIdenticalReruns) {
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  fs::path a = scratch("det_a"), b = scratch("det_b");
  ExperimentConfig ca = smoke_config(a), cb = smoke_config(b);
  ASSERT_TRUE(run_experiment(ca, data, tiny_classifier()).ok);
  ASSERT_TRUE(run_experiment(cb, data, tiny_classifier()).ok);
  EXPECT_EQ(slurp(a / "ledger.csv"), slurp(b / "ledger.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
}

TEST(Experiment, NoNoiseReportsUnboundedEpsilon) {
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  ExperimentConfig cfg = smoke_config(scratch("nonoise"));
  cfg.noise_multiplier = 0.0;
  cfg.clip = INFINITY;
  RunResult r = run_experiment(cfg, data, tiny_classifier());
  ASSERT_TRUE(r.ok) << r.failure;
  EXPECT_TRUE(std::isinf(r.ledger.back().epsilon));
  EXPECT_EQ(r.ledger.back().alpha_star, 0);
}

TEST(Experiment, DivergenceAbortsWithLedgerFlushed) {
  fs::path out = scratch("diverge");
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  ExperimentConfig cfg = smoke_config(out);
  cfg.lr = 1e300;
  cfg.gen_lr = 1e300;
  cfg.noise_multiplier = 0.0;
  cfg.clip = INFINITY;
  RunResult r = run_experiment(cfg, data, tiny_classifier());
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(r.failure.empty());
  EXPECT_EQ(read_ledger((out / "ledger.csv").string()).size(), r.ledger.size());
  EXPECT_GE(r.ledger.size(), 1u);
  EXPECT_NE(slurp(out / "run.json").find("\"failed\""), std::string::npos);
  EXPECT_FALSE(fs::exists(out / "checkpoint.bin"));
}

TEST(Sweep, ExpansionCardinality) {
  SweepConfig s;
  s.capacities = {8, 16, 32, 64};
  s.baseline = false;
  EXPECT_EQ(expand_sweep(s).size(), 4u);
  s.baseline = true;
  s.noise_multipliers = {0.6, 0.8, 1.0};
  auto runs = expand_sweep(s);
  EXPECT_EQ(runs.size(), 16u);
  EXPECT_TRUE(runs.back().baseline);
  EXPECT_EQ(runs.back().config.noise_multiplier, 0.0);
  EXPECT_TRUE(std::isinf(runs.back().config.clip));
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) EXPECT_NE(runs[i].config.out, runs[j].config.out);
}

TEST(Sweep, ListKeysParse) {
  SweepConfig s;
  apply_sweep_config(s, parse_config_text("sweep-clip = 0.5, 1, 2\nsweep-capacity=8,16\nbaseline=false\nsteps=7"));
  EXPECT_EQ(s.clips, (std::vector<double>{0.5, 1.0, 2.0}));
  EXPECT_EQ(s.capacities, (std::vector<std::size_t>{8, 16}));
  EXPECT_FALSE(s.baseline);
  EXPECT_EQ(s.base.steps, 7u);
  EXPECT_THROW(apply_sweep_config(s, parse_config_text("sweep-clip = a,b")), ConfigError);
}

TEST(Sweep, SingleConfigMatchesRunExperiment) {
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  fs::path dir = scratch("sweep_single");
  SweepConfig s;
  s.base = smoke_config(dir);
  s.baseline = false;
  auto runs = run_sweep(s, data, tiny_classifier());
  ASSERT_EQ(runs.size(), 1u);
  ExperimentConfig direct = runs[0].config;
  direct.out = (dir / "direct").string();
  RunResult r = run_experiment(direct, data, tiny_classifier());
  EXPECT_EQ(slurp(fs::path(runs[0].config.out) / "ledger.csv"), slurp(dir / "direct" / "ledger.csv"));
  EXPECT_EQ(runs[0].ledger.size(), r.ledger.size());
  EXPECT_TRUE(fs::exists(dir / "sweep.csv"));
}

TEST(Sweep, EpsilonDecreasesInSigmaAndFailuresAreRecorded) {
  LabeledImages data = synthetic_classes(64, 8, 10, 2);
  fs::path dir = scratch("sweep_sigma");
  SweepConfig s;
  s.base = smoke_config(dir);
  s.base.steps = 4;
  s.base.eval_every = 4;
  s.noise_multipliers = {0.6, 0.8, 1.0, -1.0};
  s.baseline = true;
  auto runs = run_sweep(s, data, tiny_classifier());
  ASSERT_EQ(runs.size(), 5u);
  EXPECT_TRUE(runs[0].ok && runs[1].ok && runs[2].ok && runs[4].ok);
  EXPECT_FALSE(runs[3].ok);
  EXPECT_GT(runs[0].ledger.back().epsilon, runs[1].ledger.back().epsilon);
  EXPECT_GT(runs[1].ledger.back().epsilon, runs[2].ledger.back().epsilon);
  EXPECT_TRUE(std::isinf(runs[4].ledger.back().epsilon));
  const std::string csv = slurp(dir / "sweep.csv");
  EXPECT_EQ(csv.rfind(std::string(kSweepHeaderPrefix) + kLedgerHeader, 0), 0u);
  EXPECT_NE(slurp(dir / "sweep.json").find("noise-multiplier"), std::string::npos);
}
