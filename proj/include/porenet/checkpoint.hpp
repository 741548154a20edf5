#pragma once

// JSON checkpoints: model configuration, every parameter with its AdamW
// moments, and a hash tying the file to one framework + configuration.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "porenet/dataset.hpp"
#include "porenet/model.hpp"

namespace porenet {

inline constexpr int kCheckpointVersion = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string model_config_text(const ModelConfig& c, const RbfConfig& rbf) {
  std::string s = "hidden " + std::to_string(c.hidden) + "\nsteps " + std::to_string(c.steps) + "\nreadout " +
                  std::to_string(c.readout_width) + "\npores " + (c.with_pores ? "1" : "0") + "\nsymmetry " +
                  (c.with_symmetry ? "1" : "0") + "\naggregation " + aggregation_name(c.aggregation) + "\ntie_steps " +
                  (c.tie_steps ? "1" : "0") + "\nslope " + detail::fmt_double(c.leaky_slope) + "\nrbf_gamma " +
                  detail::fmt_double(rbf.gamma()) + "\nrbf_centers";
  for (double x : rbf.centers()) s += " " + detail::fmt_double(x);
  return s + "\n";
}

inline std::string config_hash(const Framework& f, const ModelConfig& c, const RbfConfig& rbf) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(model_config_text(c, rbf), fnv1a(write_framework(f)))));
  return buf;
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"hidden", c.hidden},           {"steps", c.steps},         {"readout_width", c.readout_width},
          {"with_pores", c.with_pores},   {"with_symmetry", c.with_symmetry},
          {"aggregation", aggregation_name(c.aggregation)},           {"tie_steps", c.tie_steps},
          {"leaky_slope", c.leaky_slope}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.readout_width = j.at("readout_width").get<std::size_t>();
  c.with_pores = j.at("with_pores").get<bool>();
  c.with_symmetry = j.at("with_symmetry").get<bool>();
  const std::string agg = j.at("aggregation").get<std::string>();
  if (agg != "mean" && agg != "sum") throw ValidationError("unknown aggregation '" + agg + "'");
  c.aggregation = agg == "mean" ? Aggregation::Mean : Aggregation::Sum;
  c.tie_steps = j.at("tie_steps").get<bool>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.validate();
  return c;
}

inline nlohmann::json checkpoint_json(const Model& m, const Framework& f, std::size_t epoch) {
  nlohmann::json params = nlohmann::json::array();
  for (const Param& p : m.params().all()) {
    auto vec = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"value", vec(p.value)},
                      {"m", vec(p.m)},  {"v", vec(p.v)},           {"steps", p.steps}});
  }
  return {{"format", "porenet-checkpoint"},
          {"version", kCheckpointVersion},
          {"framework", f.name()},
          {"config_hash", config_hash(f, m.config(), m.rbf())},
          {"model", model_config_json(m.config())},
          {"rbf", {{"centers", m.rbf().centers()}, {"gamma", m.rbf().gamma()}}},
          {"epoch", epoch},
          {"params", params}};
}

inline void save_checkpoint(const std::string& path, const Model& m, const Framework& f, std::size_t epoch = 0) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << checkpoint_json(m, f, epoch).dump(1) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Rebuilds the model for `f` and fills in the stored parameters. Throws
/// ValidationError when the stored hash does not match f and the stored
/// configuration.
inline Model load_checkpoint(const std::string& path, const Framework& f) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("'" + path + "' is not a valid checkpoint: " + e.what());
  }
  try {
    if (j.at("format") != "porenet-checkpoint") throw ValidationError("'" + path + "' is not a porenet checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ValidationError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    const ModelConfig cfg = model_config_from_json(j.at("model"));
    const RbfConfig rbf(j.at("rbf").at("centers").get<std::vector<double>>(), j.at("rbf").at("gamma").get<double>());
    const std::string want = config_hash(f, cfg, rbf);
    const std::string got = j.at("config_hash").get<std::string>();
    if (want != got)
      throw ValidationError("checkpoint config hash " + got + " does not match framework '" + f.name() + "' (" + want + ")");
    Model m = init_model(sharing_pattern(f, cfg.with_pores), cfg, rbf, 0);
    auto& ps = m.params();
    const auto& stored = j.at("params");
    if (stored.size() != ps.size()) throw ValidationError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model has " + std::to_string(ps.size()));
    for (const auto& e : stored) {
      const std::string name = e.at("name").get<std::string>();
      Param& p = ps[ps.id(name)];
      if (e.at("shape").get<std::vector<std::size_t>>() != p.value.shape())
        throw ValidationError("parameter '" + name + "' has the wrong shape");
      auto load = [&](const char* key, Tensor& t) {
        auto v = e.at(key).get<std::vector<double>>();
        if (v.size() != t.size()) throw ValidationError("parameter '" + name + "' field '" + key + "' has the wrong size");
        t = Tensor(t.shape(), v);
      };
      load("value", p.value);
      load("m", p.m);
      load("v", p.v);
      p.steps = e.at("steps").get<std::uint64_t>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace porenet
