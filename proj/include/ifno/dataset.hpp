#pragma once

// Dataset container, study splits and the on-disk format:
//   <dir>/manifest.json  grid, protocol table, seed, per-sample tags, version
//   <dir>/samples.bin    little-endian f64, sample-major, [boundary | field]
//                        boundary = 2 values per boundary node (ux, uy),
//                        field = nx * ny * 2 values in grid layout.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifno/errors.hpp"
#include "ifno/grid.hpp"
#include "ifno/protocols.hpp"
#include "ifno/rng.hpp"

namespace ifno {

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
  int nx = 21;
  int ny = 21;
  Extent extent{5.5, 5.5};
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
  nlohmann::json metadata = nlohmann::json::object();  // generator settings, recorded constants

  std::size_t size() const { return samples.size(); }

  void validate() const {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const Sample& s = samples[k];
      if (s.field.nx() != nx || s.field.ny() != ny || s.field.channels() != 2 || s.boundary.nx() != nx ||
          s.boundary.ny() != ny)
        throw DataError("dataset: sample " + std::to_string(k) + " does not match the " + std::to_string(nx) +
                        "x" + std::to_string(ny) + " grid");
      if (s.protocol_id < 1 || s.protocol_id > 7)
        throw DataError("dataset: sample " + std::to_string(k) + " has protocol id " +
                        std::to_string(s.protocol_id) + " outside 1-7");
    }
  }
};

// ---------------------------------------------------------------------------
// Study splits.

struct StudySplit {
  std::vector<std::size_t> train;  // ascending sample indices
  std::vector<std::size_t> test;
};

inline constexpr double kStudyOneTrainFraction = 0.83;

/// Protocol sets used for training in studies 2-4; the complement is tested.
inline std::vector<int> study_train_protocols(int study_id) {
  switch (study_id) {
    case 2: return {1, 2, 4};
    case 3: return {1, 6, 7};
    case 4: return {2, 3, 4, 5, 6, 7};
    default: throw ConfigError("study " + std::to_string(study_id) + " has no protocol split");
  }
}

/// Study 1: random floor(83%) of all samples for training. Studies 2-4:
/// split by protocol. Deterministic given the seed.
inline StudySplit split_study(const Dataset& data, int study_id, std::uint64_t seed) {
  if (study_id < 1 || study_id > 4) throw ConfigError("unknown study id " + std::to_string(study_id) + " (1-4)");
  StudySplit s;
  const std::size_t n = data.size();
  if (study_id == 1) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::floor(kStudyOneTrainFraction * static_cast<double>(n)));
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  } else {
    const auto protos = study_train_protocols(study_id);
    for (std::size_t k = 0; k < n; ++k) {
      const bool in_train = std::find(protos.begin(), protos.end(), data.samples[k].protocol_id) != protos.end();
      (in_train ? s.train : s.test).push_back(k);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline std::vector<Sample> select(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t k : idx) out.push_back(data.samples.at(k));
  return out;
}

// ---------------------------------------------------------------------------
// Binary helpers: little-endian f64 regardless of host order.

inline void write_f64_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("unexpected end of binary data");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

inline nlohmann::json protocol_table_json() {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& p : protocol_table())
    t.push_back({{"id", p.id},
                 {"name", p.name},
                 {"ratio", {p.ratio_p11, p.ratio_p22}},
                 {"max_stretch", {p.max_stretch_x, p.max_stretch_y}},
                 {"max_stress_kpa", {p.max_p11_kpa, p.max_p22_kpa}}});
  return t;
}

inline void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "ifno-dataset";
  m["version"] = kDatasetFormatVersion;
  m["nx"] = data.nx;
  m["ny"] = data.ny;
  m["extent"] = {data.extent.x, data.extent.y};
  m["seed"] = data.seed;
  m["count"] = data.size();
  m["protocols"] = protocol_table_json();
  m["metadata"] = data.metadata;
  nlohmann::json tags = nlohmann::json::array();
  for (const Sample& s : data.samples) {
    nlohmann::json t{{"protocol", s.protocol_id},
                     {"frame", s.frame_index},
                     {"cycle", s.cycle},
                     {"provenance", to_string(s.provenance)}};
    if (s.stress) t["stress"] = {s.stress->lambda1, s.stress->lambda2, s.stress->p11, s.stress->p22};
    tags.push_back(std::move(t));
  }
  m["samples"] = std::move(tags);
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::ios_base::failure("cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << '\n';
  }
  std::ofstream bin(dir / "samples.bin", std::ios::binary);
  if (!bin) throw std::ios_base::failure("cannot write " + (dir / "samples.bin").string());
  for (const Sample& s : data.samples) {
    for (double v : s.boundary.values()) write_f64_le(bin, v);
    for (double v : s.field.values()) write_f64_le(bin, v);
  }
  if (!bin) throw std::ios_base::failure("write failed: " + (dir / "samples.bin").string());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::ios_base::failure("cannot open " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }
  try {
    if (m.at("format") != "ifno-dataset") throw DataError("manifest.json: not an ifno dataset");
    if (m.at("version").get<int>() != kDatasetFormatVersion)
      throw DataError("manifest.json: unsupported format version " + m.at("version").dump());
    Dataset d;
    d.nx = m.at("nx").get<int>();
    d.ny = m.at("ny").get<int>();
    d.extent = {m.at("extent").at(0).get<double>(), m.at("extent").at(1).get<double>()};
    d.seed = m.at("seed").get<std::uint64_t>();
    d.metadata = m.value("metadata", nlohmann::json::object());
    const auto count = m.at("count").get<std::size_t>();
    const auto& tags = m.at("samples");
    if (tags.size() != count) throw DataError("manifest.json: sample tag count does not match count");

    std::ifstream bin(dir / "samples.bin", std::ios::binary);
    if (!bin) throw std::ios_base::failure("cannot open " + (dir / "samples.bin").string());
    const std::size_t nb = boundary_size(d.nx, d.ny) * 2;
    const std::size_t nf = static_cast<std::size_t>(d.nx) * d.ny * 2;
    const auto expected = static_cast<std::uintmax_t>(count * (nb + nf) * 8);
    if (std::filesystem::file_size(dir / "samples.bin") != expected)
      throw DataError("samples.bin: size does not match manifest (" + std::to_string(expected) + " bytes expected)");
    d.samples.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      std::vector<double> b(nb), f(nf);
      for (double& v : b) v = read_f64_le(bin);
      for (double& v : f) v = read_f64_le(bin);
      Sample s;
      s.boundary = BoundaryLoading(d.nx, d.ny, d.extent, std::move(b));
      s.field = GridField(d.nx, d.ny, 2, d.extent, std::move(f));
      const auto& t = tags[k];
      s.protocol_id = t.at("protocol").get<int>();
      s.frame_index = t.at("frame").get<int>();
      s.cycle = t.value("cycle", 0);
      s.provenance = provenance_from_string(t.value("provenance", std::string("synthetic")));
      if (t.contains("stress")) {
        const auto& r = t["stress"];
        s.stress = StressStretchRecord{r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                       r.at(3).get<double>()};
      }
      d.samples.push_back(std::move(s));
    }
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw DataError(std::string("dataset: ") + e.what());
  }
}

/// One row per node per sample, for inspection.
inline void export_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out.precision(17);
  out << "sample,protocol,cycle,frame,i,j,x,y,ux,uy\n";
  for (std::size_t k = 0; k < data.size(); ++k) {
    const Sample& s = data.samples[k];
    for (int i = 0; i < data.nx; ++i)
      for (int j = 0; j < data.ny; ++j)
        out << k << ',' << s.protocol_id << ',' << s.cycle << ',' << s.frame_index << ',' << i << ',' << j << ','
            << s.field.coord_x(i) << ',' << s.field.coord_y(j) << ',' << s.field(i, j, 0) << ','
            << s.field(i, j, 1) << '\n';
  }
  if (!out) throw std::ios_base::failure("write failed: " + path.string());
}

}  // namespace ifno
