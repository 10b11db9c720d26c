#pragma once

// Binary parameter checkpoint plus JSON sidecar.
//
// Binary layout (all integers and values little-endian):
//   8 bytes   magic "DPLABCKP"
//   u32       format version
//   u32       tensor count
//   u64       total value count
//   f64 * N   parameter values, tensors in ParamSet order, row-major
// The sidecar `<path>.json` carries parameter names and shapes, the model
// architecture and, for private runs, the accountant state.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "dplab/classifier.hpp"
#include "dplab/error.hpp"
#include "dplab/gan.hpp"
#include "dplab/tensor.hpp"

namespace dplab {

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'L', 'A', 'B', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

using Json = nlohmann::ordered_json;

namespace detail {

inline void put_le(std::vector<std::uint8_t>& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(const std::vector<std::uint8_t>& b, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b[at + i]} << (8 * i);
  return v;
}

}  // namespace detail

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

/// Writes values and sidecar; `meta` is stored under "meta".
inline void save_params(const std::string& path, const ParamSet& params, const Json& meta) {
  std::vector<std::uint8_t> b(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  const std::vector<double> flat = params.flatten();
  detail::put_le(b, kCheckpointVersion, 4);
  detail::put_le(b, params.size(), 4);
  detail::put_le(b, flat.size(), 8);
  for (double v : flat) detail::put_le(b, std::bit_cast<std::uint64_t>(v), 8);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out) throw CheckpointError("write failed: " + path);
  }
  Json side;
  side["format"] = "dplab-checkpoint";
  side["version"] = kCheckpointVersion;
  side["parameters"] = Json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    side["parameters"].push_back({{"name", params.name(i)}, {"shape", params[i].shape()}});
  side["meta"] = meta;
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  if (!js) throw CheckpointError("cannot write checkpoint sidecar " + sidecar_path(path));
  js << side.dump(2) << '\n';
}

struct LoadedParams {
  ParamSet params;
  Json meta;
};

inline LoadedParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::vector<std::uint8_t> b{std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>()};
  if (b.size() < 24 || std::memcmp(b.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError(path + ": not a checkpoint file");
  const auto version = detail::get_le(b, 8, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto tensors = detail::get_le(b, 12, 4);
  const auto count = detail::get_le(b, 16, 8);
  if (b.size() != 24 + 8 * count)
    throw CheckpointError(path + ": expected " + std::to_string(24 + 8 * count) + " bytes, found " +
                          std::to_string(b.size()));

  std::ifstream js(sidecar_path(path));
  if (!js) throw CheckpointError("cannot open checkpoint sidecar " + sidecar_path(path));
  Json side;
  try {
    side = Json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(sidecar_path(path) + ": " + e.what());
  }
  if (side.value("version", 0u) != version)
    throw CheckpointError(path + ": sidecar version does not match");
  const auto& entries = side.at("parameters");
  if (entries.size() != tensors) throw CheckpointError(path + ": sidecar tensor count mismatch");

  LoadedParams out;
  std::size_t at = 24, used = 0;
  for (const auto& e : entries) {
    const Shape shape = e.at("shape").get<Shape>();
    Tensor t(shape);
    if (used + t.size() > count) throw CheckpointError(path + ": sidecar shapes exceed value count");
    for (auto& v : t.values()) {
      v = std::bit_cast<double>(detail::get_le(b, at, 8));
      at += 8;
    }
    used += t.size();
    out.params.add(e.at("name").get<std::string>(), std::move(t));
  }
  if (used != count) throw CheckpointError(path + ": value count does not match sidecar shapes");
  out.meta = side.at("meta");
  return out;
}

/// Accountant state sufficient to recompute epsilon offline.
struct AccountantState {
  std::uint64_t steps = 0;
  double sampling_rate = 0.0;
  double noise_multiplier = 0.0;
  double clip = 0.0;
  double delta = 1e-5;
};

inline Json to_json(const AccountantState& a) {
  return {{"steps", a.steps}, {"sampling_rate", a.sampling_rate},
          {"noise_multiplier", a.noise_multiplier},
          {"clip", std::isinf(a.clip) ? Json("inf") : Json(a.clip)}, {"delta", a.delta}};
}

inline AccountantState accountant_from_json(const Json& j) {
  AccountantState a;
  a.steps = j.at("steps").get<std::uint64_t>();
  a.sampling_rate = j.at("sampling_rate").get<double>();
  a.noise_multiplier = j.at("noise_multiplier").get<double>();
  a.clip = j.at("clip").is_string() ? INFINITY : j.at("clip").get<double>();
  a.delta = j.at("delta").get<double>();
  return a;
}

inline Json to_json(const GanArchitecture& a) {
  return {{"capacity", a.capacity}, {"latent_dim", a.latent_dim}, {"image_side", a.image_side},
          {"leaky_slope", a.leaky_slope}, {"kernel", a.kernel}, {"stride", a.stride},
          {"pad", a.pad}};
}

/// Generator parameters followed by critic parameters in one file.
inline void save_gan(const std::string& path, const GanModel& m, const AccountantState& acc) {
  ParamSet all;
  for (std::size_t i = 0; i < m.gen_params.size(); ++i) all.add(m.gen_params.name(i), m.gen_params[i]);
  for (std::size_t i = 0; i < m.critic_params.size(); ++i)
    all.add(m.critic_params.name(i), m.critic_params[i]);
  save_params(path, all,
              {{"kind", "wgan-gp"}, {"architecture", to_json(m.arch)},
               {"generator_tensors", m.gen_params.size()}, {"accountant", to_json(acc)}});
}

struct LoadedGan {
  GanModel model;
  AccountantState accountant;
};

inline LoadedGan load_gan(const std::string& path) {
  LoadedParams lp = load_params(path);
  if (lp.meta.value("kind", "") != "wgan-gp") throw CheckpointError(path + ": not a GAN checkpoint");
  const Json& a = lp.meta.at("architecture");
  GanArchitecture arch;
  arch.capacity = a.at("capacity");
  arch.latent_dim = a.at("latent_dim");
  arch.image_side = a.at("image_side");
  arch.leaky_slope = a.at("leaky_slope");
  arch.kernel = a.at("kernel");
  arch.stride = a.at("stride");
  arch.pad = a.at("pad");
  LoadedGan out{GanModel{arch, build_generator(arch), build_critic(arch), {}, {}},
                accountant_from_json(lp.meta.at("accountant"))};
  const std::size_t ng = lp.meta.at("generator_tensors");
  for (std::size_t i = 0; i < lp.params.size(); ++i)
    (i < ng ? out.model.gen_params : out.model.critic_params).add(lp.params.name(i), lp.params[i]);
  try {
    out.model.generator.check_params(out.model.gen_params);
    out.model.critic.check_params(out.model.critic_params);
  } catch (const Error& e) {
    throw CheckpointError(path + ": parameters do not match the architecture: " + e.what());
  }
  return out;
}

inline void save_classifier(const std::string& path, const Classifier& c, const ClassifierConfig& cfg,
                            double validation_accuracy) {
  save_params(path, c.params,
              {{"kind", "classifier"}, {"image_side", c.side}, {"classes", cfg.classes},
               {"conv1", cfg.conv1}, {"conv2", cfg.conv2}, {"hidden", cfg.hidden},
               {"validation_accuracy", validation_accuracy}});
}

inline Classifier load_classifier(const std::string& path) {
  LoadedParams lp = load_params(path);
  if (lp.meta.value("kind", "") != "classifier")
    throw CheckpointError(path + ": not a classifier checkpoint");
  ClassifierConfig cfg;
  cfg.classes = lp.meta.at("classes");
  cfg.conv1 = lp.meta.at("conv1");
  cfg.conv2 = lp.meta.at("conv2");
  cfg.hidden = lp.meta.at("hidden");
  Classifier c;
  c.side = lp.meta.at("image_side");
  c.classes = cfg.classes;
  c.net = Classifier::build(c.side, cfg);
  c.params = std::move(lp.params);
  try {
    c.net.check_params(c.params);
  } catch (const Error& e) {
    throw CheckpointError(path + ": parameters do not match the architecture: " + e.what());
  }
  return c;
}

}  // namespace dplab
