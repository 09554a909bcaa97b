#pragma once

// Parameter checkpoint file:
//   bytes 0-7   magic "IFNOCKPT"
//   bytes 8-15  header length n, little-endian u64
//   n bytes     JSON header (format version, model dims, depth, dt, seed,
//               block names and sizes in storage order)
//   rest        every block as little-endian f64, in header order

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "ifno/dataset.hpp"
#include "ifno/model.hpp"

namespace ifno {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[9] = "IFNOCKPT";

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"nx", c.nx},
          {"ny", c.ny},
          {"extent", {c.extent.x, c.extent.y}},
          {"width", c.width},
          {"proj_width", c.proj_width},
          {"modes_x", c.modes_x},
          {"modes_y", c.modes_y},
          {"depth", c.depth},
          {"horizon", c.horizon},
          {"activation", to_string(c.activation)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.nx = j.at("nx").get<int>();
  c.ny = j.at("ny").get<int>();
  c.extent = {j.at("extent").at(0).get<double>(), j.at("extent").at(1).get<double>()};
  c.width = j.at("width").get<int>();
  c.proj_width = j.at("proj_width").get<int>();
  c.modes_x = j.at("modes_x").get<int>();
  c.modes_y = j.at("modes_y").get<int>();
  c.depth = j.at("depth").get<int>();
  c.horizon = j.at("horizon").get<double>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.validate();
  return c;
}

inline nlohmann::json checkpoint_header(const IfnoParams& p) {
  nlohmann::json blocks = nlohmann::json::array();
  for_each_block(p, [&](const std::string& name, std::span<const double> s) {
    blocks.push_back({{"name", name}, {"count", s.size()}});
  });
  return {{"format", "ifno-checkpoint"},
          {"version", kCheckpointFormatVersion},
          {"model", to_json(p.config)},
          {"depth", p.depth()},
          {"dt", p.dt()},
          {"seed", p.seed},
          {"blocks", blocks}};
}

inline void write_checkpoint(std::ostream& out, const IfnoParams& p) {
  const std::string header = checkpoint_header(p).dump();
  out.write(kCheckpointMagic, 8);
  std::uint64_t n = header.size();
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((n >> (8 * b)) & 0xFF));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for_each_block(p, [&](const std::string&, std::span<const double> s) {
    for (double v : s) write_f64_le(out, v);
  });
}

inline IfnoParams read_checkpoint(std::istream& in, const std::string& name = "<checkpoint>") {
  char magic[8];
  if (!in.read(magic, 8) || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw DataError(name + ": not an ifno checkpoint (bad magic)");
  std::uint64_t n = 0;
  for (int b = 0; b < 8; ++b) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw DataError(name + ": truncated header length");
    n |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  if (n > (1u << 24)) throw DataError(name + ": implausible header length");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw DataError(name + ": truncated header");
  try {
    const auto h = nlohmann::json::parse(text);
    if (h.at("format") != "ifno-checkpoint") throw DataError(name + ": wrong format tag");
    if (h.at("version").get<int>() != kCheckpointFormatVersion)
      throw DataError(name + ": unsupported checkpoint version " + h.at("version").dump());
    IfnoParams p = IfnoParams::zeros(model_config_from_json(h.at("model")));
    p.seed = h.at("seed").get<std::uint64_t>();
    if (h.at("depth").get<int>() != p.depth()) throw DataError(name + ": depth disagrees with model dims");
    const auto& blocks = h.at("blocks");
    std::size_t k = 0;
    for_each_block(p, [&](const std::string& block, std::span<double> s) {
      if (k >= blocks.size() || blocks[k].at("name") != block || blocks[k].at("count").get<std::size_t>() != s.size())
        throw DataError(name + ": block layout mismatch at '" + block + "'");
      for (double& v : s) v = read_f64_le(in);
      ++k;
    });
    if (k != blocks.size()) throw DataError(name + ": unexpected extra blocks");
    if (in.peek() != std::char_traits<char>::eof()) throw DataError(name + ": trailing bytes after parameters");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad header: " + e.what());
  } catch (const std::ios_base::failure&) {
    throw DataError(name + ": truncated parameter data");
  } catch (const ConfigError& e) {
    throw DataError(name + ": " + e.what());
  }
}

inline void save_checkpoint(const IfnoParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  write_checkpoint(out, p);
  if (!out) throw std::ios_base::failure("write failed: " + path.string());
}

inline IfnoParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  return read_checkpoint(in, path.string());
}

}  // namespace ifno
