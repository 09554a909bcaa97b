#pragma once

// End-to-end study runs: split, train the vanilla and physics-guided
// operators with the same seed, fit and evaluate the Fung baseline, and emit
// the report artifacts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifno/checkpoint.hpp"
#include "ifno/config.hpp"
#include "ifno/dataset.hpp"
#include "ifno/fem.hpp"
#include "ifno/fung.hpp"
#include "ifno/training.hpp"

namespace ifno {

inline constexpr int kReportFormatVersion = 1;
inline const std::string kModelVanilla = "ifno";
inline const std::string kModelPhysics = "pg_ifno";
inline const std::string kModelFung = "fung";

/// One row of the per-sample table.
struct SampleError {
  std::string model;
  std::string split;  // "train" or "test"
  std::size_t sample = 0;
  int protocol = 0;
  int cycle = 0;
  int frame = 0;
  bool evaluated = true;  // false for Fung rows outside the evaluated cycles
  bool defined = true;    // false when the true field norm is below the floor
  double error = 0.0;
  double error_norm = 0.0;
  double truth_norm = 0.0;

  friend bool operator==(const SampleError&, const SampleError&) = default;
};

/// Averages over the evaluated, defined rows of one model and split. The
/// pooled error is ||all errors|| / ||all truths|| over the same rows.
struct SplitSummary {
  double mean_error = 0.0;
  double pooled_error = 0.0;
  std::size_t count = 0;

  friend bool operator==(const SplitSummary&, const SplitSummary&) = default;
};

struct ModelSummary {
  std::string model;
  SplitSummary train;
  SplitSummary test;
  std::optional<double> physics_loss;  // operator models only

  friend bool operator==(const ModelSummary&, const ModelSummary&) = default;
};

struct FieldDump {
  std::string model;
  std::size_t sample = 0;
  GridField truth;
  GridField prediction;
};

struct StudyReport {
  int study_id = 0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<ModelSummary> models;
  std::vector<SampleError> errors;
  std::optional<FungParams> fung_params;
  std::optional<double> fung_objective;
  std::map<std::string, double> timing;  // seconds per stage; not reproducible

  // artifacts written beside summary.json
  std::map<std::string, TrainHistory> histories;
  std::vector<FieldDump> field_dumps;

  /// Equality of everything serialized to summary.json except timing.
  bool same_summary(const StudyReport& o) const {
    return study_id == o.study_id && seed == o.seed && config == o.config && models == o.models &&
           errors == o.errors && fung_params == o.fung_params && fung_objective == o.fung_objective;
  }
};

// ---------------------------------------------------------------------------
// Summaries

inline SplitSummary summarize(const std::vector<SampleError>& rows, const std::string& model, const std::string& split) {
  SplitSummary s;
  double sum = 0.0, err2 = 0.0, truth2 = 0.0;
  for (const auto& r : rows) {
    if (r.model != model || r.split != split || !r.evaluated || !r.defined) continue;
    ++s.count;
    sum += r.error;
    err2 += r.error_norm * r.error_norm;
    truth2 += r.truth_norm * r.truth_norm;
  }
  if (s.count > 0) {
    s.mean_error = sum / static_cast<double>(s.count);
    s.pooled_error = truth2 > 0.0 ? std::sqrt(err2 / truth2) : 0.0;
  }
  return s;
}

inline const ModelSummary* find_model(const StudyReport& r, const std::string& model) {
  for (const auto& m : r.models)
    if (m.model == model) return &m;
  return nullptr;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const SplitSummary& s) {
  return {{"mean_error", s.mean_error}, {"pooled_error", s.pooled_error}, {"count", s.count}};
}

inline SplitSummary split_summary_from_json(const nlohmann::json& j) {
  return {j.at("mean_error").get<double>(), j.at("pooled_error").get<double>(), j.at("count").get<std::size_t>()};
}

inline nlohmann::json summary_json(const StudyReport& r) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models) {
    nlohmann::json e = {{"model", m.model}, {"train", to_json(m.train)}, {"test", to_json(m.test)}};
    e["physics_loss"] = m.physics_loss ? nlohmann::json(*m.physics_loss) : nlohmann::json(nullptr);
    models.push_back(std::move(e));
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.errors)
    rows.push_back({{"model", s.model},
                    {"split", s.split},
                    {"sample", s.sample},
                    {"protocol", s.protocol},
                    {"cycle", s.cycle},
                    {"frame", s.frame},
                    {"evaluated", s.evaluated},
                    {"defined", s.defined},
                    {"error", s.error},
                    {"error_norm", s.error_norm},
                    {"truth_norm", s.truth_norm}});
  nlohmann::json fung = nlohmann::json(nullptr);
  if (r.fung_params)
    fung = {{"params", r.fung_params->as_array()}, {"objective", r.fung_objective.value_or(0.0)}};
  nlohmann::json timing = nlohmann::json::object();
  for (const auto& [k, v] : r.timing) timing[k] = v;
  return {{"format", "ifno-study-report"},
          {"version", kReportFormatVersion},
          {"study", r.study_id},
          {"seed", r.seed},
          {"config", r.config},
          {"models", models},
          {"per_sample", rows},
          {"fung", fung},
          {"timing", timing}};
}

inline StudyReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "ifno-study-report") throw DataError("summary: wrong format tag");
    if (j.at("version").get<int>() != kReportFormatVersion) throw DataError("summary: unsupported version");
    StudyReport r;
    r.study_id = j.at("study").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    for (const auto& e : j.at("models")) {
      ModelSummary m;
      m.model = e.at("model").get<std::string>();
      m.train = split_summary_from_json(e.at("train"));
      m.test = split_summary_from_json(e.at("test"));
      if (!e.at("physics_loss").is_null()) m.physics_loss = e.at("physics_loss").get<double>();
      r.models.push_back(std::move(m));
    }
    for (const auto& e : j.at("per_sample"))
      r.errors.push_back({e.at("model").get<std::string>(), e.at("split").get<std::string>(),
                          e.at("sample").get<std::size_t>(), e.at("protocol").get<int>(), e.at("cycle").get<int>(),
                          e.at("frame").get<int>(), e.at("evaluated").get<bool>(), e.at("defined").get<bool>(),
                          e.at("error").get<double>(), e.at("error_norm").get<double>(),
                          e.at("truth_norm").get<double>()});
    if (!j.at("fung").is_null()) {
      r.fung_params = FungParams::from_array(j.at("fung").at("params").get<std::array<double, 4>>());
      r.fung_objective = j.at("fung").at("objective").get<double>();
    }
    for (const auto& [k, v] : j.at("timing").items()) r.timing[k] = v.get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("summary: ") + e.what());
  }
}

inline StudyReport read_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Artifacts

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << text;
  if (!out) throw std::ios_base::failure("write failed: " + path.string());
}

inline std::string field_dump_csv(const GridField& truth, const GridField& pred) {
  if (!truth.same_shape(pred)) throw ConfigError("field dump: shape mismatch");
  std::ostringstream os;
  os.precision(17);
  os << "x,y,ux_true,uy_true,ux_pred,uy_pred\n";
  const double hx = truth.extent().x / (truth.nx() - 1), hy = truth.extent().y / (truth.ny() - 1);
  for (int i = 0; i < truth.nx(); ++i)
    for (int j = 0; j < truth.ny(); ++j)
      os << i * hx << ',' << j * hy << ',' << truth(i, j, 0) << ',' << truth(i, j, 1) << ',' << pred(i, j, 0) << ','
         << pred(i, j, 1) << '\n';
  return os.str();
}

/// summary.json, per_sample_errors.csv, loss_history.csv and one
/// field_<model>_<sample>.csv per dumped field.
inline void emit_report(const StudyReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "summary.json", summary_json(r).dump(2) + "\n");

  std::ostringstream rows;
  rows.precision(17);
  rows << "model,split,sample,protocol,cycle,frame,evaluated,defined,error,error_norm,truth_norm\n";
  for (const auto& s : r.errors)
    rows << s.model << ',' << s.split << ',' << s.sample << ',' << s.protocol << ',' << s.cycle << ',' << s.frame << ','
         << int(s.evaluated) << ',' << int(s.defined) << ',' << s.error << ',' << s.error_norm << ','
         << s.truth_norm << '\n';
  write_text(dir / "per_sample_errors.csv", rows.str());

  std::ostringstream hist;
  hist.precision(17);
  hist << "model,epoch,depth,lr,data_loss,physics_loss,seconds\n";
  for (const auto& [model, h] : r.histories)
    for (const auto& e : h.epochs)
      hist << model << ',' << e.epoch << ',' << e.depth << ',' << e.lr << ',' << e.data_loss << ',' << e.physics_loss
           << ',' << e.seconds << '\n';
  write_text(dir / "loss_history.csv", hist.str());

  for (const auto& d : r.field_dumps)
    write_text(dir / ("field_" + d.model + "_" + std::to_string(d.sample) + ".csv"), field_dump_csv(d.truth, d.prediction));
}

// ---------------------------------------------------------------------------
// Study execution

namespace detail {

/// Runs one stage, prefixing failures with the stage name; the error type
/// (and therefore the CLI exit code) is preserved.
template <class F>
auto run_stage(const std::string& name, std::map<std::string, double>& timing, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&] { timing[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record();
    } else {
      auto out = f();
      record();
      return out;
    }
  } catch (const ConfigError& e) {
    throw ConfigError("stage '" + name + "': " + e.what());
  } catch (const DataError& e) {
    throw DataError("stage '" + name + "': " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("stage '" + name + "': " + e.what());
  } catch (const std::ios_base::failure& e) {
    throw std::ios_base::failure("stage '" + name + "': " + e.what());
  }
}

inline SampleError score(const std::string& model, const std::string& split, std::size_t k, const Sample& s,
                         const GridField& pred) {
  const RelativeError e = relative_l2_error(pred, s.field);
  return {model, split, k, s.protocol_id, s.cycle, s.frame_index, true, e.defined, e.value, e.error_norm, e.truth_norm};
}

}  // namespace detail

struct StudyOptionsRuntime {
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<std::filesystem::path> artifacts;  // partial results persisted here stage by stage
};

inline StudyReport run_study(const Dataset& data, const RunConfig& cfg, const StudyOptionsRuntime& rt) {
  cfg.validate();
  data.validate();
  if (data.nx != cfg.model.nx || data.ny != cfg.model.ny || !(data.extent == cfg.model.extent))
    throw ConfigError("run_study: dataset grid " + std::to_string(data.nx) + "x" + std::to_string(data.ny) +
                      " does not match model.nx/model.ny/model.extent in the config");
  StudyReport r;
  r.study_id = cfg.study.id;
  r.seed = rt.seed;
  r.config = to_json(cfg);
  if (rt.artifacts) std::filesystem::create_directories(*rt.artifacts);

  const StudySplit split = detail::run_stage("split", r.timing, [&] { return split_study(data, cfg.study.id, rt.seed); });
  if (split.train.empty()) throw DataError("stage 'split': training split is empty");
  const std::vector<Sample> train_set = select(data, split.train);

  auto train_model = [&](const std::string& name, double gamma) {
    TrainConfig tc = cfg.train;
    tc.gamma = gamma;
    tc.seed = rt.seed;
    tc.threads = rt.threads;
    TrainResult res = detail::run_stage("train-" + name, r.timing, [&] { return train(train_set, cfg.model, tc); });
    if (rt.artifacts) {
      save_checkpoint(res.params, *rt.artifacts / (name + ".ckpt"));
      write_text(*rt.artifacts / (name + "_history.csv"), history_csv(res.history));
    }
    return res;
  };
  const TrainResult vanilla = train_model(kModelVanilla, 0.0);
  const TrainResult physics = train_model(kModelPhysics, cfg.study.physics_gamma);
  r.histories[kModelVanilla] = vanilla.history;
  r.histories[kModelPhysics] = physics.history;

  // representative test samples for field dumps, evenly spaced through the split
  std::vector<std::size_t> dump_ids;
  const auto& dump_pool = split.test.empty() ? split.train : split.test;
  const std::size_t n_dump = std::min<std::size_t>(static_cast<std::size_t>(cfg.study.field_dumps), dump_pool.size());
  for (std::size_t q = 0; q < n_dump; ++q) dump_ids.push_back(dump_pool[q * dump_pool.size() / n_dump]);
  auto wants_dump = [&](std::size_t k) { return std::find(dump_ids.begin(), dump_ids.end(), k) != dump_ids.end(); };

  auto evaluate = [&](const std::string& model, auto&& predict, auto&& include) {
    for (const auto& [name, ids] : {std::pair{std::string("train"), &split.train}, std::pair{std::string("test"), &split.test}})
      for (std::size_t k : *ids) {
        const Sample& s = data.samples[k];
        if (!include(s)) {
          r.errors.push_back({model, name, k, s.protocol_id, s.cycle, s.frame_index, false, false, 0.0, 0.0, 0.0});
          continue;
        }
        const GridField pred = predict(s);
        r.errors.push_back(detail::score(model, name, k, s, pred));
        if (wants_dump(k)) r.field_dumps.push_back({model, k, s.field, pred});
      }
  };
  auto all = [](const Sample&) { return true; };

  for (const auto* res : {&vanilla, &physics}) {
    const std::string model = res == &vanilla ? kModelVanilla : kModelPhysics;
    detail::run_stage("evaluate-" + model, r.timing, [&] {
      const SpectralBasis basis(res->params.sub_x.spectral_weight.modes);
      evaluate(model, [&](const Sample& s) { return forward(s.boundary, res->params, basis); }, all);
    });
  }

  if (cfg.study.fung) {
    const FungFit fit = detail::run_stage("fit-fung", r.timing, [&] {
      std::vector<StressStretchRecord> records;
      for (std::size_t k : split.train)
        if (data.samples[k].stress) records.push_back(*data.samples[k].stress);
      if (records.size() < 4)
        throw DataError("training split has " + std::to_string(records.size()) +
                        " stress-stretch records; the Fung fit needs at least 4");
      return fit_fung_de(records, cfg.bounds, cfg.de, rt.seed);
    });
    r.fung_params = fit.params;
    r.fung_objective = fit.objective;
    if (rt.artifacts) write_text(*rt.artifacts / "fung_fit.json", nlohmann::json{{"params", fit.params.as_array()}, {"objective", fit.objective}}.dump(2) + "\n");
    detail::run_stage("fem-fung", r.timing, [&] {
      evaluate(kModelFung, [&](const Sample& s) { return fem_solve_fung(s.boundary, fit.params, cfg.fem); },
               [&](const Sample& s) { return cfg.study.fung_all_cycles || s.cycle == 0; });
    });
  }

  for (const std::string& model : {kModelVanilla, kModelPhysics, kModelFung}) {
    if (model == kModelFung && !cfg.study.fung) continue;
    ModelSummary m;
    m.model = model;
    m.train = summarize(r.errors, model, "train");
    m.test = summarize(r.errors, model, "test");
    if (model == kModelVanilla) m.physics_loss = physics_loss(vanilla.params);
    if (model == kModelPhysics) m.physics_loss = physics_loss(physics.params);
    r.models.push_back(std::move(m));
  }
  return r;
}

}  // namespace ifno
