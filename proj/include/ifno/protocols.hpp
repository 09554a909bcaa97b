#pragma once

// Biaxial testing protocols of the reference tricuspid-valve specimen.

#include <array>
#include <string>

#include "ifno/errors.hpp"

namespace ifno {

struct ProtocolSpec {
  int id = 0;
  std::string name;
  double ratio_p11 = 1.0;  // target P11 : P22
  double ratio_p22 = 1.0;
  double max_stretch_x = 1.0;
  double max_stretch_y = 1.0;
  double max_p11_kpa = 0.0;
  double max_p22_kpa = 0.0;
  int recorded_samples = 0;
};

inline const std::array<ProtocolSpec, 7>& protocol_table() {
  static const std::array<ProtocolSpec, 7> table{{
      {1, "biaxial 1:1", 1.0, 1.0, 1.46, 1.68, 184.1, 165.1, 3921},
      {2, "biaxial 1:0.66", 1.0, 0.66, 1.48, 1.63, 187.1, 127.8, 3797},
      {3, "biaxial 1:0.33", 1.0, 0.33, 1.52, 1.52, 186.9, 74.1, 3539},
      {4, "biaxial 0.66:1", 0.66, 1.0, 1.42, 1.72, 145.9, 188.2, 4013},
      {5, "biaxial 0.33:1", 0.33, 1.0, 1.32, 1.79, 77.9, 189.8, 4175},
      {6, "constrained uniaxial x 0.05:1", 0.05, 1.0, 1.56, 1.0, 197.9, 10.6, 3539},
      {7, "constrained uniaxial y 1:0.1", 1.0, 0.1, 1.0, 1.89, 17.2, 176.1, 3539},
  }};
  return table;
}

inline const ProtocolSpec& protocol(int id) {
  if (id < 1 || id > 7) throw ConfigError("unknown protocol id " + std::to_string(id) + " (expected 1-7)");
  return protocol_table()[static_cast<std::size_t>(id - 1)];
}

}  // namespace ifno
