#pragma once

// Flat key-value configuration.
//
//   # comment
//   key = value
//
// Keys match the long CLI flags without the leading dashes. Unknown keys,
// repeated keys and malformed values are ConfigErrors.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dplab/dataset.hpp"
#include "dplab/error.hpp"
#include "dplab/gan.hpp"
#include "dplab/ledger.hpp"

namespace dplab {

struct ExperimentConfig {
  std::string data_dir;
  std::size_t image_side = 8;
  std::size_t subset = 4000;
  std::size_t capacity = 8;
  std::size_t latent_dim = 32;
  double clip = 1.0;
  double noise_multiplier = 0.8;
  std::size_t batch_size = 64;
  std::uint64_t steps = 2000;  ///< critic steps, each charged to the accountant
  std::size_t n_critic = 5;
  double lambda_gp = 10.0;
  double lr = 1e-3;            ///< critic learning rate
  double gen_lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double delta = 1e-5;
  std::uint64_t seed = 1;
  std::uint64_t eval_every = 200;
  std::size_t eval_samples = 2048;
  std::size_t is_splits = 10;
  std::string out = "runs/default";
  std::string classifier;      ///< checkpoint path; empty trains one
  SamplingScheme sampling = SamplingScheme::Poisson;
  GeneratorObjective objective = GeneratorObjective::Standard;
  bool record_wall_time = false;

  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct ConfigField {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
ConfigField uint_field(T ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& v) { c.*m = static_cast<T>(parse_uint("", v)); },
          [m](const ExperimentConfig& c) { return std::to_string(c.*m); }};
}

inline ConfigField real_field(double ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& v) { c.*m = parse_real("", v); },
          [m](const ExperimentConfig& c) { return format_double(c.*m); }};
}

inline ConfigField string_field(std::string ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& v) { c.*m = v; },
          [m](const ExperimentConfig& c) { return c.*m; }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      {"data-dir", string_field(&ExperimentConfig::data_dir)},
      {"image-side", uint_field(&ExperimentConfig::image_side)},
      {"subset", uint_field(&ExperimentConfig::subset)},
      {"capacity", uint_field(&ExperimentConfig::capacity)},
      {"latent-dim", uint_field(&ExperimentConfig::latent_dim)},
      {"clip", real_field(&ExperimentConfig::clip)},
      {"noise-multiplier", real_field(&ExperimentConfig::noise_multiplier)},
      {"batch-size", uint_field(&ExperimentConfig::batch_size)},
      {"steps", uint_field(&ExperimentConfig::steps)},
      {"n-critic", uint_field(&ExperimentConfig::n_critic)},
      {"lambda-gp", real_field(&ExperimentConfig::lambda_gp)},
      {"lr", real_field(&ExperimentConfig::lr)},
      {"gen-lr", real_field(&ExperimentConfig::gen_lr)},
      {"beta1", real_field(&ExperimentConfig::beta1)},
      {"beta2", real_field(&ExperimentConfig::beta2)},
      {"delta", real_field(&ExperimentConfig::delta)},
      {"seed", uint_field(&ExperimentConfig::seed)},
      {"eval-every", uint_field(&ExperimentConfig::eval_every)},
      {"eval-samples", uint_field(&ExperimentConfig::eval_samples)},
      {"is-splits", uint_field(&ExperimentConfig::is_splits)},
      {"out", string_field(&ExperimentConfig::out)},
      {"classifier", string_field(&ExperimentConfig::classifier)},
      {"sampling",
       {[](ExperimentConfig& c, const std::string& v) {
          if (v == "poisson") c.sampling = SamplingScheme::Poisson;
          else if (v == "shuffle") c.sampling = SamplingScheme::Shuffle;
          else throw ConfigError("sampling: expected poisson or shuffle, got '" + v + "'");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.sampling == SamplingScheme::Poisson ? "poisson" : "shuffle");
        }}},
      {"generator-objective",
       {[](ExperimentConfig& c, const std::string& v) {
          if (v == "standard") c.objective = GeneratorObjective::Standard;
          else if (v == "literal") c.objective = GeneratorObjective::Literal;
          else throw ConfigError("generator-objective: expected standard or literal, got '" + v + "'");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.objective == GeneratorObjective::Standard ? "standard" : "literal");
        }}},
      {"record-wall-time",
       {[](ExperimentConfig& c, const std::string& v) { c.record_wall_time = parse_bool("", v); },
        [](const ExperimentConfig& c) { return std::string(c.record_wall_time ? "true" : "false"); }}},
  };
  return fields;
}

}  // namespace detail

inline bool is_config_key(const std::string& key) { return detail::config_fields().count(key) > 0; }

/// Sets one key; the error message names the key.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto& f = detail::config_fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown configuration key '" + key + "'");
  try {
    it->second.set(c, value);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind(": ", 0) == 0 ? key + msg : msg);
  }
}

/// Key-value pairs in file order.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

inline ConfigEntries parse_config_text(const std::string& text, const std::string& origin = "config") {
  ConfigEntries out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    for (const auto& [k, v] : out)
      if (k == key) throw ConfigError(origin + ":" + std::to_string(lineno) + ": repeated key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline ConfigEntries read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline void apply_config(ExperimentConfig& c, const ConfigEntries& entries) {
  for (const auto& [k, v] : entries) set_config_value(c, k, v);
}

/// Every key with its current value, sorted by key.
inline ConfigEntries config_entries(const ExperimentConfig& c) {
  ConfigEntries out;
  for (const auto& [k, f] : detail::config_fields()) out.emplace_back(k, f.get(c));
  return out;
}

inline std::string format_config(const ExperimentConfig& c) {
  std::string s;
  for (const auto& [k, v] : config_entries(c)) s += k + " = " + v + "\n";
  return s;
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (image_side != 8 && image_side != 16 && image_side != 28)
    fail("image-side must be 8, 16 or 28");
  if (subset == 0) fail("subset must be positive");
  if (capacity == 0) fail("capacity must be positive");
  if (latent_dim == 0) fail("latent-dim must be positive");
  if (!(clip > 0.0)) fail("clip must be positive");
  if (!(noise_multiplier >= 0.0) || std::isinf(noise_multiplier))
    fail("noise-multiplier must be finite and non-negative");
  if (std::isinf(clip) && noise_multiplier > 0.0) fail("an infinite clip requires noise-multiplier 0");
  if (batch_size == 0 || batch_size > subset) fail("batch-size must lie in [1, subset]");
  if (steps == 0) fail("steps must be positive");
  if (n_critic == 0) fail("n-critic must be positive");
  if (!(lambda_gp > 0.0)) fail("lambda-gp must be positive");
  if (!(lr > 0.0) || !(gen_lr > 0.0)) fail("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail("beta1 and beta2 must lie in [0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) fail("delta must lie in (0, 1)");
  if (eval_every == 0) fail("eval-every must be positive");
  if (is_splits == 0) fail("is-splits must be positive");
  if (eval_samples < is_splits * 10) fail("eval-samples must be at least is-splits * 10");
  if (out.empty()) fail("out must name a directory");
}

}  // namespace dplab
