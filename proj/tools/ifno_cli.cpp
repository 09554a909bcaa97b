// Command-line front end: one subcommand per pipeline stage.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ifno/ifno.hpp"

namespace fs = std::filesystem;
using namespace ifno;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  int threads = 1;
};

RunConfig effective_config(const Globals& g) { return g.config.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config); }

// ---------------------------------------------------------------------------
// Scattered-sample interchange used between ingest, smooth and resample.

nlohmann::json scattered_to_json(const std::vector<ScatteredSample>& samples) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : samples)
    arr.push_back({{"protocol", s.protocol_id},
                   {"frame", s.frame_index},
                   {"rows", s.rows},
                   {"cols", s.cols},
                   {"provenance", to_string(s.provenance)},
                   {"points", s.points},
                   {"displacement", s.displacement}});
  return {{"format", "ifno-scattered"}, {"version", 1}, {"samples", arr}};
}

std::vector<ScatteredSample> read_scattered(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("format") != "ifno-scattered") throw DataError(path.string() + ": not a scattered-sample file");
    std::vector<ScatteredSample> out;
    for (const auto& e : j.at("samples")) {
      ScatteredSample s;
      s.protocol_id = e.at("protocol").get<int>();
      s.frame_index = e.at("frame").get<int>();
      s.rows = e.at("rows").get<int>();
      s.cols = e.at("cols").get<int>();
      s.provenance = provenance_from_string(e.at("provenance").get<std::string>());
      s.points = e.at("points").get<std::vector<Point2>>();
      s.displacement = e.at("displacement").get<std::vector<Point2>>();
      if (s.points.size() != s.displacement.size()) throw DataError(path.string() + ": point/displacement count mismatch");
      out.push_back(std::move(s));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

FungParams read_fung_params(const fs::path& path) {
  const auto j = read_json(path);
  try {
    return FungParams::from_array(j.at("params").get<std::array<double, 4>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": expected {\"params\": [c, a1, a2, a3]}: " + e.what());
  }
}

/// Indices of the samples selected by an optional study split.
std::vector<std::size_t> chosen(const Dataset& d, int study, const std::string& split, std::uint64_t seed) {
  if (study == 0) {
    std::vector<std::size_t> all(d.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  const StudySplit s = split_study(d, study, seed);
  if (split == "train") return s.train;
  if (split == "test") return s.test;
  throw ConfigError("--split must be train or test");
}

/// Writes predictions as a dataset plus a per-sample error table.
void write_predictions(const Dataset& data, const std::vector<std::size_t>& ids, const std::vector<GridField>& preds,
                       const fs::path& out, const std::string& model) {
  Dataset pd = data;
  pd.samples.clear();
  std::ostringstream rows;
  rows.precision(17);
  rows << "sample,protocol,cycle,frame,defined,error\n";
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t q = 0; q < ids.size(); ++q) {
    const Sample& s = data.samples[ids[q]];
    Sample p = s;
    p.field = preds[q];
    pd.samples.push_back(std::move(p));
    const RelativeError e = relative_l2_error(preds[q], s.field);
    rows << ids[q] << ',' << s.protocol_id << ',' << s.cycle << ',' << s.frame_index << ',' << int(e.defined) << ','
         << e.value << '\n';
    if (e.defined) {
      sum += e.value;
      ++n;
    }
  }
  pd.metadata = {{"source", "prediction"}, {"model", model}};
  save_dataset(pd, out / "predictions");
  write_text(out / "errors.csv", rows.str());
  std::cout << model << ": " << ids.size() << " samples, mean relative error "
            << (n ? sum / static_cast<double>(n) : 0.0) << '\n';
}

void print_report(const StudyReport& r, std::ostream& os) {
  os << "study " << r.study_id << ", seed " << r.seed << '\n';
  os << std::left << std::setw(10) << "model" << std::right << std::setw(14) << "train mean" << std::setw(14)
     << "test mean" << std::setw(14) << "test pooled" << std::setw(8) << "n_test" << std::setw(14) << "physics" << '\n';
  for (const auto& m : r.models) {
    os << std::left << std::setw(10) << m.model << std::right << std::fixed << std::setprecision(4) << std::setw(13)
       << 100.0 * m.train.mean_error << '%' << std::setw(13) << 100.0 * m.test.mean_error << '%' << std::setw(13)
       << 100.0 * m.test.pooled_error << '%' << std::setw(8) << m.test.count << std::setw(14);
    if (m.physics_loss)
      os << std::scientific << std::setprecision(3) << *m.physics_loss;
    else
      os << "-";
    os << std::defaultfloat << '\n';
  }
  if (r.fung_params) {
    const auto p = r.fung_params->as_array();
    os << "fung params c=" << p[0] << " a1=" << p[1] << " a2=" << p[2] << " a3=" << p[3] << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Implicit Fourier neural operator toolkit for soft-tissue displacement fields"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for splits, initialization, shuffling and DE");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads for gradient evaluation")->check(CLI::PositiveNumber);
  app.fallthrough();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  bool gen_csv = false;
  gen->add_flag("--csv", gen_csv, "Also export samples.csv");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert tracked-node CSV exports into scattered displacement samples");
  std::vector<std::string> tracked;
  ingest->add_option("inputs", tracked, "Tracked-node CSV files")->required()->check(CLI::ExistingFile);

  // smooth
  auto* smooth = app.add_subcommand("smooth", "Moving-least-squares smoothing of scattered samples");
  std::string smooth_in;
  smooth->add_option("input", smooth_in, "scattered.json")->required()->check(CLI::ExistingFile);

  // resample
  auto* resample = app.add_subcommand("resample", "Spline-resample scattered samples onto the model grid as a dataset");
  std::string resample_in, resample_stress;
  resample->add_option("input", resample_in, "scattered.json")->required()->check(CLI::ExistingFile);
  resample->add_option("--stress", resample_stress, "Stress CSV with one row per sample, in order")->check(CLI::ExistingFile);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train an operator on a dataset");
  std::string train_data;
  int train_study = 0;
  std::optional<double> train_gamma;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--study", train_study, "Train on the training split of study 1-4 (0: all samples)")->check(CLI::Range(0, 4));
  train_cmd->add_option("--gamma", train_gamma, "Physics weight (overrides train.gamma)")->check(CLI::NonNegativeNumber);

  // predict
  auto* predict = app.add_subcommand("predict", "Predict displacement fields with a trained checkpoint");
  std::string pred_ckpt, pred_data, pred_split = "test";
  int pred_study = 0;
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--data", pred_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--study", pred_study, "Restrict to a study split (0: all samples)")->check(CLI::Range(0, 4));
  predict->add_option("--split", pred_split, "train or test");

  // fit-fung
  auto* fit = app.add_subcommand("fit-fung", "Fit Fung parameters by differential evolution");
  std::string fit_stress, fit_data;
  int fit_study = 0;
  fit->add_option("--stress", fit_stress, "Stress CSV (lambda1,lambda2,P11_kPa,P22_kPa)")->check(CLI::ExistingFile);
  fit->add_option("--data", fit_data, "Dataset directory carrying stress records")->check(CLI::ExistingDirectory);
  fit->add_option("--study", fit_study, "Use the training split of study 1-4")->check(CLI::Range(0, 4));

  // fem-predict
  auto* fem_cmd = app.add_subcommand("fem-predict", "Predict displacement fields with the Fung finite-element model");
  std::string fem_params, fem_data, fem_split = "test";
  int fem_study = 0;
  bool fem_all_cycles = false;
  fem_cmd->add_option("--params", fem_params, "fung_fit.json")->required()->check(CLI::ExistingFile);
  fem_cmd->add_option("--data", fem_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  fem_cmd->add_option("--study", fem_study, "Restrict to a study split (0: all samples)")->check(CLI::Range(0, 4));
  fem_cmd->add_option("--split", fem_split, "train or test");
  fem_cmd->add_flag("--all-cycles", fem_all_cycles, "Evaluate every cycle, not only the first");

  // run-study
  auto* study = app.add_subcommand("run-study", "Run a complete study and emit its report");
  std::string study_data;
  std::optional<int> study_id;
  study->add_option("--data", study_data, "Dataset directory (default: generate from the synthetic config)")
      ->check(CLI::ExistingDirectory);
  study->add_option("--study", study_id, "Study id 1-4 (overrides study.id)")->check(CLI::Range(1, 4));

  // report
  auto* report = app.add_subcommand("report", "Print a study summary as a table");
  std::string report_in;
  report->add_option("summary", report_in, "summary.json")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const fs::path out(g.out);
    RunConfig cfg = effective_config(g);

    if (gen->parsed()) {
      SyntheticConfig sc = cfg.synthetic;
      sc.seed = g.seed;
      const Dataset d = generate_synthetic(sc);
      save_dataset(d, out);
      if (gen_csv) export_dataset_csv(d, out / "samples.csv");
      std::cout << "wrote " << d.size() << " samples to " << out << '\n';
    } else if (ingest->parsed()) {
      std::vector<ScatteredSample> all;
      for (const auto& path : tracked) {
        const auto frames = frames_to_samples(ingest_tracked_csv(path));
        all.insert(all.end(), frames.begin(), frames.end());
      }
      fs::create_directories(out);
      write_json(out / "scattered.json", scattered_to_json(all));
      std::cout << "wrote " << all.size() << " scattered samples to " << out / "scattered.json" << '\n';
    } else if (smooth->parsed()) {
      const auto smoothed = mls_smooth(read_scattered(smooth_in), cfg.mls);
      fs::create_directories(out);
      write_json(out / "scattered.json", scattered_to_json(smoothed));
      std::cout << "smoothed " << smoothed.size() << " samples\n";
    } else if (resample->parsed()) {
      const auto scattered = read_scattered(resample_in);
      std::vector<StressStretchRecord> stress;
      if (!resample_stress.empty()) {
        stress = read_stress_csv(resample_stress);
        if (stress.size() != scattered.size())
          throw DataError("--stress has " + std::to_string(stress.size()) + " rows for " +
                          std::to_string(scattered.size()) + " samples");
      }
      Dataset d;
      d.nx = cfg.model.nx;
      d.ny = cfg.model.ny;
      d.seed = g.seed;
      for (std::size_t k = 0; k < scattered.size(); ++k) {
        Sample s = spline_resample(scattered[k], d.nx, d.ny);
        if (!stress.empty()) s.stress = stress[k];
        d.samples.push_back(std::move(s));
      }
      if (!d.samples.empty()) d.extent = d.samples.front().field.extent();
      for (const auto& s : d.samples)
        if (!(s.field.extent() == d.extent))
          throw DataError("resample: samples span different tracked regions; resample each specimen separately");
      d.metadata = {{"source", "tracked"}, {"input", resample_in}};
      save_dataset(d, out);
      std::cout << "wrote " << d.size() << " samples on a " << d.nx << "x" << d.ny << " grid to " << out << '\n';
    } else if (train_cmd->parsed()) {
      const Dataset d = load_dataset(train_data);
      ModelConfig mc = cfg.model;
      mc.extent = d.extent;
      if (d.nx != mc.nx || d.ny != mc.ny) throw ConfigError("dataset grid does not match model.nx/model.ny");
      TrainConfig tc = cfg.train;
      tc.seed = g.seed;
      tc.threads = g.threads;
      if (train_gamma) tc.gamma = *train_gamma;
      const auto ids = chosen(d, train_study, "train", g.seed);
      const auto set = select(d, ids);
      const TrainResult r = train(set, mc, tc, nullptr, [](const EpochRecord& e) {
        if (e.epoch % 50 == 0)
          std::cerr << "epoch " << e.epoch << " depth " << e.depth << " data " << e.data_loss << " physics "
                    << e.physics_loss << '\n';
      });
      fs::create_directories(out);
      save_checkpoint(r.params, out / "model.ckpt");
      write_text(out / "loss_history.csv", history_csv(r.history));
      std::cout << "best loss " << r.history.best_loss << " at epoch " << r.history.best_epoch << "; wrote "
                << out / "model.ckpt" << '\n';
    } else if (predict->parsed()) {
      const IfnoParams p = load_checkpoint(pred_ckpt);
      const Dataset d = load_dataset(pred_data);
      const auto ids = chosen(d, pred_study, pred_split, g.seed);
      const SpectralBasis basis(p.sub_x.spectral_weight.modes);
      std::vector<GridField> preds;
      for (std::size_t k : ids) preds.push_back(forward(d.samples[k].boundary, p, basis));
      write_predictions(d, ids, preds, out, "ifno");
    } else if (fit->parsed()) {
      std::vector<StressStretchRecord> records;
      if (!fit_stress.empty()) records = read_stress_csv(fit_stress);
      if (!fit_data.empty()) {
        const Dataset d = load_dataset(fit_data);
        for (std::size_t k : chosen(d, fit_study, "train", g.seed))
          if (d.samples[k].stress) records.push_back(*d.samples[k].stress);
      }
      if (fit_stress.empty() && fit_data.empty()) throw ConfigError("fit-fung needs --stress or --data");
      const FungFit f = fit_fung_de(records, cfg.bounds, cfg.de, g.seed);
      fs::create_directories(out);
      write_json(out / "fung_fit.json", {{"params", f.params.as_array()},
                                         {"objective", f.objective},
                                         {"records", records.size()},
                                         {"seed", g.seed},
                                         {"trace", f.best_trace}});
      const auto a = f.params.as_array();
      std::cout << "c=" << a[0] << " a1=" << a[1] << " a2=" << a[2] << " a3=" << a[3] << " objective=" << f.objective
                << '\n';
    } else if (fem_cmd->parsed()) {
      const FungParams p = read_fung_params(fem_params);
      const Dataset d = load_dataset(fem_data);
      std::vector<std::size_t> ids;
      for (std::size_t k : chosen(d, fem_study, fem_split, g.seed))
        if (fem_all_cycles || d.samples[k].cycle == 0) ids.push_back(k);
      std::vector<GridField> preds;
      for (std::size_t k : ids) preds.push_back(fem_solve_fung(d.samples[k].boundary, p, cfg.fem));
      write_predictions(d, ids, preds, out, "fung");
    } else if (study->parsed()) {
      if (study_id) cfg.study.id = *study_id;
      Dataset d;
      if (study_data.empty()) {
        SyntheticConfig sc = cfg.synthetic;
        sc.seed = g.seed;
        d = generate_synthetic(sc);
      } else {
        d = load_dataset(study_data);
      }
      StudyOptionsRuntime rt;
      rt.seed = g.seed;
      rt.threads = g.threads;
      rt.artifacts = out;
      const StudyReport r = run_study(d, cfg, rt);
      emit_report(r, out);
      print_report(r, std::cout);
    } else if (report->parsed()) {
      print_report(read_summary(report_in), std::cout);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
}
