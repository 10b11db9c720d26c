#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dplab/config.hpp"
#include "dplab/experiment.hpp"

namespace dplab {

/// Grid over (C, sigma, capacity) sharing every other setting. Empty lists
/// fall back to the base value. With `baseline` set, one non-private run
/// (sigma = 0, C = inf) is added per capacity.
struct SweepConfig {
  ExperimentConfig base;
  std::vector<double> clips;
  std::vector<double> noise_multipliers;
  std::vector<std::size_t> capacities;
  bool baseline = true;
};

struct SweepRun {
  ExperimentConfig config;
  bool baseline = false;
  bool ok = false;
  std::string failure;
  std::vector<LedgerRow> ledger;
};

namespace detail {

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// Sweep keys: sweep-clip, sweep-noise-multiplier, sweep-capacity (comma
/// lists) and baseline; everything else goes to the base config.
inline void apply_sweep_config(SweepConfig& s, const ConfigEntries& entries) {
  for (const auto& [k, v] : entries) {
    if (k == "sweep-clip") {
      s.clips.clear();
      for (const auto& x : detail::split_list(v)) s.clips.push_back(detail::parse_real(k, x));
    } else if (k == "sweep-noise-multiplier") {
      s.noise_multipliers.clear();
      for (const auto& x : detail::split_list(v))
        s.noise_multipliers.push_back(detail::parse_real(k, x));
    } else if (k == "sweep-capacity") {
      s.capacities.clear();
      for (const auto& x : detail::split_list(v))
        s.capacities.push_back(static_cast<std::size_t>(detail::parse_uint(k, x)));
    } else if (k == "baseline") {
      s.baseline = detail::parse_bool(k, v);
    } else {
      set_config_value(s.base, k, v);
    }
  }
}

/// The concrete run configurations, each with its own output directory.
inline std::vector<SweepRun> expand_sweep(const SweepConfig& s) {
  const auto clips = s.clips.empty() ? std::vector<double>{s.base.clip} : s.clips;
  const auto sigmas =
      s.noise_multipliers.empty() ? std::vector<double>{s.base.noise_multiplier} : s.noise_multipliers;
  const auto caps = s.capacities.empty() ? std::vector<std::size_t>{s.base.capacity} : s.capacities;
  std::vector<SweepRun> runs;
  auto add = [&](double c, double sigma, std::size_t cap, bool baseline) {
    SweepRun r;
    r.config = s.base;
    r.config.clip = c;
    r.config.noise_multiplier = sigma;
    r.config.capacity = cap;
    r.baseline = baseline;
    r.config.out = s.base.out + "/run" + std::to_string(runs.size()) +
                   (baseline ? "_baseline" : "_C" + detail::short_number(c) + "_sigma" + detail::short_number(sigma)) +
                   "_cap" + std::to_string(cap);
    runs.push_back(std::move(r));
  };
  for (std::size_t cap : caps)
    for (double c : clips)
      for (double sigma : sigmas) add(c, sigma, cap, false);
  if (s.baseline)
    for (std::size_t cap : caps) add(INFINITY, 0.0, cap, true);
  return runs;
}

inline constexpr const char* kSweepHeaderPrefix = "run,clip,noise_multiplier,capacity,baseline,status,";

/// Runs every configuration in order. A failing run is recorded and the
/// sweep continues. Writes `<out>/sweep.csv` and `<out>/sweep.json`.
inline std::vector<SweepRun> run_sweep(const SweepConfig& s, const LabeledImages& data,
                                       const Classifier& classifier,
                                       const std::function<void(const SweepRun&)>& on_done = {}) {
  std::vector<SweepRun> runs = expand_sweep(s);
  for (auto& r : runs) {
    try {
      RunResult rr = run_experiment(r.config, data, classifier);
      r.ok = rr.ok;
      r.failure = rr.failure;
      r.ledger = std::move(rr.ledger);
    } catch (const Error& e) {
      r.ok = false;
      r.failure = e.what();
    }
    if (on_done) on_done(r);
  }

  std::filesystem::create_directories(s.base.out);
  std::ofstream csv(s.base.out + "/sweep.csv", std::ios::trunc);
  csv << kSweepHeaderPrefix << kLedgerHeader << '\n';
  Json summary = Json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    for (const auto& row : r.ledger)
      csv << i << ',' << format_double(r.config.clip) << ',' << format_double(r.config.noise_multiplier)
          << ',' << r.config.capacity << ',' << (r.baseline ? 1 : 0) << ','
          << (r.ok ? "ok" : "failed") << ',' << format_row(row) << '\n';
    Json j = {{"run", i}, {"dir", r.config.out}, {"clip", format_double(r.config.clip)},
              {"noise_multiplier", r.config.noise_multiplier}, {"capacity", r.config.capacity},
              {"baseline", r.baseline}, {"status", r.ok ? "ok" : "failed"}};
    if (!r.ok) j["failure"] = r.failure;
    summary.push_back(j);
  }
  std::ofstream(s.base.out + "/sweep.json", std::ios::trunc) << summary.dump(2) << '\n';
  return runs;
}

}  // namespace dplab
