#pragma once

// Versioned JSON run configuration. Every section is optional; unknown keys
// and wrongly typed values are rejected with the offending path.
//
// {
//   "version": 1,
//   "model":     { "nx", "ny", "extent": [x, y], "width", "proj_width", "modes_x", "modes_y", "depth", "activation" },
//   "train":     { "epochs_per_depth", "learning_rate", "decay_ratio", "decay_every", "decay_mode", "post_decay_epochs",
//                  "depth_schedule", "gamma", "batch_size" },
//   "synthetic": { "protocols", "cycles", "frames_per_cycle", "stretch_jitter", "boundary_jitter", "noise_std",
//                  "nonlinearity", "scale", "mu_range": [lo, hi], "bumps", "operator_seed", "lipschitz_pairs",
//                  "stress_model": [c, a1, a2, a3] },
//   "fung":      { "population", "generations", "crossover", "differential_weight", "lower": [4], "upper": [4],
//                  "all_cycles" },
//   "fem":       { "shear_regularization", "thickness", "load_steps", "max_halvings", "max_newton_iterations", "tolerance" },
//   "mls":       { "radius_factor", "spacing", "min_rcond" },
//   "study":     { "id", "physics_gamma", "fung": true, "field_dumps" }
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifno/checkpoint.hpp"
#include "ifno/fem.hpp"
#include "ifno/fung.hpp"
#include "ifno/mls.hpp"
#include "ifno/synthetic.hpp"
#include "ifno/training.hpp"

namespace ifno {

inline constexpr int kConfigVersion = 1;

struct StudyOptions {
  int id = 1;
  double physics_gamma = 1.0;  // weight of the physics term for the physics-guided model
  bool fung = true;            // fit and evaluate the Fung baseline
  bool fung_all_cycles = false;  // evaluate the baseline beyond the first cycle
  int field_dumps = 3;         // representative test samples written as field CSVs

  void validate() const {
    require(id >= 1 && id <= 4, "study.id must be 1-4");
    require(physics_gamma > 0.0, "study.physics_gamma must be positive");
    require(field_dumps >= 0, "study.field_dumps must be >= 0");
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticConfig synthetic;
  DeConfig de;
  FungBounds bounds;
  FemConfig fem;
  MlsConfig mls;
  StudyOptions study;

  void validate() const {
    model.validate();
    train.validate();
    synthetic.validate();
    de.validate();
    bounds.validate();
    fem.validate();
    mls.validate();
    study.validate();
    require(train.depth_schedule.back() == model.depth,
            "train.depth_schedule must end at model.depth (" + std::to_string(model.depth) + ")");
    require(synthetic.op.nx == model.nx && synthetic.op.ny == model.ny,
            "synthetic grid follows model.nx/model.ny; do not set them separately");
  }
};

namespace detail {

class Section {
 public:
  Section(const nlohmann::json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    for (const auto& [k, v] : j_.items())
      if (!allowed.contains(k)) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw ConfigError("config: unknown key '" + path_ + "." + k + "' (allowed: " + list + ")");
      }
  }

  template <class T>
  void get(const std::string& key, T& out) const {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    const std::string where = "config: '" + path_ + "." + key + "'";
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw ConfigError(where + " must be non-negative");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!v.is_array()) throw ConfigError(where + " must be an array of integers");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(where + " must be an array of integers");
        out.push_back(e.get<int>());
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  template <std::size_t N>
  void get_array(const std::string& key, std::array<double, N>& out) const {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != N)
      throw ConfigError("config: '" + path_ + "." + key + "' must be an array of " + std::to_string(N) + " numbers");
    for (std::size_t k = 0; k < N; ++k) {
      if (!v[k].is_number()) throw ConfigError("config: '" + path_ + "." + key + "' must contain numbers");
      out[k] = v[k].get<double>();
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

}  // namespace detail

/// Applies the sections present in j on top of the defaults, then validates.
inline RunConfig parse_config(const nlohmann::json& j) {
  RunConfig c;
  const detail::Section root(j, "", {"version", "model", "train", "synthetic", "fung", "fem", "mls", "study"});
  int version = kConfigVersion;
  root.get("version", version);
  if (version != kConfigVersion)
    throw ConfigError("config: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");

  if (j.contains("model")) {
    const detail::Section s(j["model"], "model",
                            {"nx", "ny", "extent", "width", "proj_width", "modes_x", "modes_y", "depth", "activation"});
    s.get("nx", c.model.nx);
    s.get("ny", c.model.ny);
    std::array<double, 2> e{c.model.extent.x, c.model.extent.y};
    s.get_array("extent", e);
    c.model.extent = {e[0], e[1]};
    s.get("width", c.model.width);
    s.get("proj_width", c.model.proj_width);
    s.get("modes_x", c.model.modes_x);
    s.get("modes_y", c.model.modes_y);
    s.get("depth", c.model.depth);
    std::string act = to_string(c.model.activation);
    s.get("activation", act);
    c.model.activation = activation_from_string(act);
  }
  if (j.contains("train")) {
    const detail::Section s(j["train"], "train",
                            {"epochs_per_depth", "learning_rate", "decay_ratio", "decay_every", "decay_mode",
                             "post_decay_epochs", "depth_schedule", "gamma", "batch_size"});
    s.get("epochs_per_depth", c.train.epochs_per_depth);
    s.get("learning_rate", c.train.learning_rate);
    s.get("decay_ratio", c.train.decay_ratio);
    s.get("decay_every", c.train.decay_every);
    std::string mode = c.train.decay_mode == DecayMode::during ? "during" : "after";
    s.get("decay_mode", mode);
    if (mode != "during" && mode != "after") throw ConfigError("config: 'train.decay_mode' must be \"during\" or \"after\"");
    c.train.decay_mode = mode == "during" ? DecayMode::during : DecayMode::after;
    s.get("post_decay_epochs", c.train.post_decay_epochs);
    s.get("depth_schedule", c.train.depth_schedule);
    s.get("gamma", c.train.gamma);
    s.get("batch_size", c.train.batch_size);
  }
  if (!j.contains("train") || !j["train"].contains("depth_schedule")) {
    // default schedule 3, 6, 12 scaled to the configured depth
    if (c.model.depth != 12) c.train.depth_schedule = {c.model.depth};
  }
  if (j.contains("synthetic")) {
    const detail::Section s(j["synthetic"], "synthetic",
                            {"protocols", "cycles", "frames_per_cycle", "stretch_jitter", "boundary_jitter", "noise_std",
                             "nonlinearity", "scale", "mu_range", "bumps", "operator_seed", "lipschitz_pairs",
                             "stress_model"});
    s.get("protocols", c.synthetic.protocols);
    s.get("cycles", c.synthetic.cycles);
    s.get("frames_per_cycle", c.synthetic.frames_per_cycle);
    s.get("stretch_jitter", c.synthetic.stretch_jitter);
    s.get("boundary_jitter", c.synthetic.boundary_jitter);
    s.get("noise_std", c.synthetic.noise_std);
    s.get("nonlinearity", c.synthetic.op.nonlinearity);
    s.get("scale", c.synthetic.op.scale);
    std::array<double, 2> mu{c.synthetic.op.mu_min, c.synthetic.op.mu_max};
    s.get_array("mu_range", mu);
    c.synthetic.op.mu_min = mu[0];
    c.synthetic.op.mu_max = mu[1];
    s.get("bumps", c.synthetic.op.bumps);
    s.get("operator_seed", c.synthetic.op.seed);
    s.get("lipschitz_pairs", c.synthetic.lipschitz_pairs);
    auto sm = c.synthetic.stress_model.as_array();
    s.get_array("stress_model", sm);
    c.synthetic.stress_model = FungParams::from_array(sm);
  }
  c.synthetic.op.nx = c.model.nx;
  c.synthetic.op.ny = c.model.ny;
  c.synthetic.op.extent = c.model.extent;
  if (j.contains("fung")) {
    const detail::Section s(j["fung"], "fung",
                            {"population", "generations", "crossover", "differential_weight", "lower", "upper", "all_cycles"});
    s.get("population", c.de.population);
    s.get("generations", c.de.generations);
    s.get("crossover", c.de.crossover);
    s.get("differential_weight", c.de.differential_weight);
    s.get_array("lower", c.bounds.lower);
    s.get_array("upper", c.bounds.upper);
    s.get("all_cycles", c.study.fung_all_cycles);
  }
  if (j.contains("fem")) {
    const detail::Section s(j["fem"], "fem",
                            {"shear_regularization", "thickness", "load_steps", "max_halvings", "max_newton_iterations",
                             "tolerance"});
    s.get("shear_regularization", c.fem.shear_regularization);
    s.get("thickness", c.fem.thickness);
    s.get("load_steps", c.fem.load_steps);
    s.get("max_halvings", c.fem.max_halvings);
    s.get("max_newton_iterations", c.fem.max_newton_iterations);
    s.get("tolerance", c.fem.tolerance);
  }
  if (j.contains("mls")) {
    const detail::Section s(j["mls"], "mls", {"radius_factor", "spacing", "min_rcond"});
    s.get("radius_factor", c.mls.radius_factor);
    s.get("spacing", c.mls.spacing);
    s.get("min_rcond", c.mls.min_rcond);
  }
  if (j.contains("study")) {
    const detail::Section s(j["study"], "study", {"id", "physics_gamma", "fung", "field_dumps"});
    s.get("id", c.study.id);
    s.get("physics_gamma", c.study.physics_gamma);
    s.get("fung", c.study.fung);
    s.get("field_dumps", c.study.field_dumps);
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Full echo of the effective configuration, parseable by parse_config.
inline nlohmann::json to_json(const RunConfig& c) {
  const auto& s = c.synthetic;
  return {{"version", kConfigVersion},
          {"model",
           {{"nx", c.model.nx},
            {"ny", c.model.ny},
            {"extent", {c.model.extent.x, c.model.extent.y}},
            {"width", c.model.width},
            {"proj_width", c.model.proj_width},
            {"modes_x", c.model.modes_x},
            {"modes_y", c.model.modes_y},
            {"depth", c.model.depth},
            {"activation", to_string(c.model.activation)}}},
          {"train",
           {{"epochs_per_depth", c.train.epochs_per_depth},
            {"learning_rate", c.train.learning_rate},
            {"decay_ratio", c.train.decay_ratio},
            {"decay_every", c.train.decay_every},
            {"decay_mode", c.train.decay_mode == DecayMode::during ? "during" : "after"},
            {"post_decay_epochs", c.train.post_decay_epochs},
            {"depth_schedule", c.train.depth_schedule},
            {"gamma", c.train.gamma},
            {"batch_size", c.train.batch_size}}},
          {"synthetic",
           {{"protocols", s.protocols},
            {"cycles", s.cycles},
            {"frames_per_cycle", s.frames_per_cycle},
            {"stretch_jitter", s.stretch_jitter},
            {"boundary_jitter", s.boundary_jitter},
            {"noise_std", s.noise_std},
            {"nonlinearity", s.op.nonlinearity},
            {"scale", s.op.scale},
            {"mu_range", {s.op.mu_min, s.op.mu_max}},
            {"bumps", s.op.bumps},
            {"operator_seed", s.op.seed},
            {"lipschitz_pairs", s.lipschitz_pairs},
            {"stress_model", s.stress_model.as_array()}}},
          {"fung",
           {{"population", c.de.population},
            {"generations", c.de.generations},
            {"crossover", c.de.crossover},
            {"differential_weight", c.de.differential_weight},
            {"lower", c.bounds.lower},
            {"upper", c.bounds.upper},
            {"all_cycles", c.study.fung_all_cycles}}},
          {"fem",
           {{"shear_regularization", c.fem.shear_regularization},
            {"thickness", c.fem.thickness},
            {"load_steps", c.fem.load_steps},
            {"max_halvings", c.fem.max_halvings},
            {"max_newton_iterations", c.fem.max_newton_iterations},
            {"tolerance", c.fem.tolerance}}},
          {"mls", {{"radius_factor", c.mls.radius_factor}, {"spacing", c.mls.spacing}, {"min_rcond", c.mls.min_rcond}}},
          {"study",
           {{"id", c.study.id},
            {"physics_gamma", c.study.physics_gamma},
            {"fung", c.study.fung},
            {"field_dumps", c.study.field_dumps}}}};
}

}  // namespace ifno
