#pragma once

// Fung-type planar strain energy
//   psi = (c / 2) [exp(a1 E11^2 + a2 E22^2 + 2 a3 E11 E22) - 1]
// its first Piola-Kirchhoff stresses under shear-free biaxial stretch, and a
// differential-evolution fit of (c, a1, a2, a3) to stress-stretch records.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/rng.hpp"
#include "ifno/stress_record.hpp"

namespace ifno {

inline constexpr double kFungExponentLimit = 700.0;

struct FungParams {
  double c = 1.0;   // kPa
  double a1 = 1.0;
  double a2 = 1.0;
  double a3 = 0.0;

  std::array<double, 4> as_array() const { return {c, a1, a2, a3}; }
  static FungParams from_array(const std::array<double, 4>& v) { return {v[0], v[1], v[2], v[3]}; }

  /// c > 0, a1 > 0, a2 > 0 and a1 a2 - a3^2 > 0.
  bool admissible() const { return c > 0.0 && a1 > 0.0 && a2 > 0.0 && a1 * a2 - a3 * a3 > 0.0; }

  friend bool operator==(const FungParams&, const FungParams&) = default;
};

/// Specimen geometry in mm: undeformed edge lengths and thickness.
struct SpecimenGeometry {
  double length_x = 5.5;
  double length_y = 5.5;
  double thickness = 0.4;
};

inline double fung_exponent(double e11, double e22, const FungParams& p) {
  return p.a1 * e11 * e11 + p.a2 * e22 * e22 + 2.0 * p.a3 * e11 * e22;
}

inline double guarded_exp(double q) {
  if (!(q <= kFungExponentLimit))
    throw NumericalError("Fung exponent " + std::to_string(q) + " exceeds overflow guard " +
                         std::to_string(kFungExponentLimit));
  return std::exp(q);
}

inline double strain_energy(double e11, double e22, const FungParams& p) {
  const double q = fung_exponent(e11, e22, p);
  guarded_exp(q);
  return 0.5 * p.c * std::expm1(q);
}

inline double green_strain(double stretch) { return 0.5 * (stretch * stretch - 1.0); }

/// Second Piola-Kirchhoff components S11 = dpsi/dE11, S22 = dpsi/dE22.
inline std::array<double, 2> fung_second_pk(double e11, double e22, const FungParams& p) {
  const double g = p.c * guarded_exp(fung_exponent(e11, e22, p));
  return {g * (p.a1 * e11 + p.a3 * e22), g * (p.a2 * e22 + p.a3 * e11)};
}

/// Hessian of psi in (E11, E22): {d11, d12, d22}.
inline std::array<double, 3> fung_tangent(double e11, double e22, const FungParams& p) {
  const double g = p.c * guarded_exp(fung_exponent(e11, e22, p));
  const double g1 = p.a1 * e11 + p.a3 * e22, g2 = p.a2 * e22 + p.a3 * e11;
  return {g * (2.0 * g1 * g1 + p.a1), g * (2.0 * g1 * g2 + p.a3), g * (2.0 * g2 * g2 + p.a2)};
}

/// (P11, P22) in kPa for a homogeneous shear-free biaxial stretch.
inline std::array<double, 2> pk_stress(double lambda1, double lambda2, const FungParams& p) {
  if (!(lambda1 > 0.0 && lambda2 > 0.0)) throw ConfigError("pk_stress: stretches must be positive");
  const auto s = fung_second_pk(green_strain(lambda1), green_strain(lambda2), p);
  return {lambda1 * s[0], lambda2 * s[1]};
}

// ---------------------------------------------------------------------------
// Stress-stretch record files: header lambda1,lambda2,P11_kPa,P22_kPa.

inline std::vector<StressStretchRecord> read_stress_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (line.rfind("lambda1,lambda2,P11_kPa,P22_kPa", 0) != 0)
    throw DataError(path + ": expected header lambda1,lambda2,P11_kPa,P22_kPa");
  std::vector<StressStretchRecord> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ss(line);
    StressStretchRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> r.lambda1 >> c1 >> r.lambda2 >> c2 >> r.p11 >> c3 >> r.p22) || c1 != ',' || c2 != ',' || c3 != ',')
      throw DataError(path + ": malformed row " + std::to_string(row));
    if (!(r.lambda1 > 0.0 && r.lambda2 > 0.0) || !std::isfinite(r.p11) || !std::isfinite(r.p22))
      throw DataError(path + ": invalid values on row " + std::to_string(row));
    out.push_back(r);
  }
  return out;
}

inline void write_stress_csv(const std::string& path, const std::vector<StressStretchRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path);
  out.precision(17);
  out << "lambda1,lambda2,P11_kPa,P22_kPa\n";
  for (const auto& r : records) out << r.lambda1 << ',' << r.lambda2 << ',' << r.p11 << ',' << r.p22 << '\n';
  if (!out) throw std::ios_base::failure("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Differential evolution, DE/rand/1/bin.

struct FungBounds {
  std::array<double, 4> lower{0.01, 0.01, 0.01, -20.0};
  std::array<double, 4> upper{100.0, 50.0, 50.0, 20.0};

  void validate() const {
    for (int k = 0; k < 4; ++k)
      require(lower[static_cast<std::size_t>(k)] < upper[static_cast<std::size_t>(k)],
              "fung bounds: lower must be < upper for every parameter");
  }
};

struct DeConfig {
  int population = 40;  // >= 10 x dimension
  int generations = 300;
  double crossover = 0.9;
  double differential_weight = 0.8;

  void validate() const {
    require(population >= 40, "differential evolution: population must be >= 40 (10 x dimension)");
    require(generations >= 1, "differential evolution: generations must be >= 1");
    require(crossover >= 0.0 && crossover <= 1.0, "differential evolution: crossover must lie in [0, 1]");
    require(differential_weight > 0.0 && differential_weight <= 2.0,
            "differential evolution: differential weight must lie in (0, 2]");
  }
};

/// Mean over records and both components of the squared stress residual;
/// +inf for inadmissible parameters or exponent overflow.
inline double fung_objective(const FungParams& p, const std::vector<StressStretchRecord>& records) {
  if (!p.admissible()) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (const auto& r : records) {
    const double e11 = green_strain(r.lambda1), e22 = green_strain(r.lambda2);
    if (!(fung_exponent(e11, e22, p) <= kFungExponentLimit)) return std::numeric_limits<double>::infinity();
    const auto pk = pk_stress(r.lambda1, r.lambda2, p);
    s += (pk[0] - r.p11) * (pk[0] - r.p11) + (pk[1] - r.p22) * (pk[1] - r.p22);
  }
  return s / (2.0 * static_cast<double>(records.size()));
}

struct FungFit {
  FungParams params;
  double objective = 0.0;
  std::vector<double> best_trace;  // best objective after each generation
  FungBounds bounds;
  DeConfig de;
  std::uint64_t seed = 0;
};

inline FungFit fit_fung_de(const std::vector<StressStretchRecord>& records, const FungBounds& bounds,
                           const DeConfig& de, std::uint64_t seed) {
  bounds.validate();
  de.validate();
  if (records.size() < 4) throw DataError("fit_fung_de: need at least 4 stress-stretch records");
  bool x_loaded = false, y_loaded = false;
  for (const auto& r : records) {
    x_loaded = x_loaded || r.lambda1 != 1.0;
    y_loaded = y_loaded || r.lambda2 != 1.0;
  }
  if (!x_loaded || !y_loaded) throw DataError("fit_fung_de: records must stretch both axes");

  using Vec = std::array<double, 4>;
  Rng rng(seed);
  const auto np = static_cast<std::size_t>(de.population);
  std::vector<Vec> pop(np);
  std::vector<double> cost(np);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t k = 0; k < 4; ++k) pop[i][k] = rng.uniform(bounds.lower[k], bounds.upper[k]);
    cost[i] = fung_objective(FungParams::from_array(pop[i]), records);
  }
  bool any_finite = false;
  for (double c : cost) any_finite = any_finite || std::isfinite(c);
  if (!any_finite)
    throw ConfigError("fit_fung_de: every initial candidate is inadmissible; check the parameter bounds");

  auto best_index = [&] {
    std::size_t b = 0;
    for (std::size_t i = 1; i < np; ++i)
      if (cost[i] < cost[b]) b = i;
    return b;
  };

  FungFit fit;
  fit.bounds = bounds;
  fit.de = de;
  fit.seed = seed;
  fit.best_trace.reserve(static_cast<std::size_t>(de.generations));
  for (int g = 0; g < de.generations; ++g) {
    for (std::size_t i = 0; i < np; ++i) {
      std::size_t r1, r2, r3;
      do r1 = rng.index(np); while (r1 == i);
      do r2 = rng.index(np); while (r2 == i || r2 == r1);
      do r3 = rng.index(np); while (r3 == i || r3 == r1 || r3 == r2);
      const std::size_t forced = rng.index(4);
      Vec trial = pop[i];
      for (std::size_t k = 0; k < 4; ++k) {
        if (k != forced && rng.uniform() >= de.crossover) continue;
        double v = pop[r1][k] + de.differential_weight * (pop[r2][k] - pop[r3][k]);
        // out-of-range components are redrawn between the parent and the bound
        if (v < bounds.lower[k]) v = bounds.lower[k] + rng.uniform() * (pop[i][k] - bounds.lower[k]);
        if (v > bounds.upper[k]) v = bounds.upper[k] - rng.uniform() * (bounds.upper[k] - pop[i][k]);
        trial[k] = v;
      }
      const double c = fung_objective(FungParams::from_array(trial), records);
      if (c <= cost[i]) {
        pop[i] = trial;
        cost[i] = c;
      }
    }
    fit.best_trace.push_back(cost[best_index()]);
  }
  const std::size_t b = best_index();
  fit.params = FungParams::from_array(pop[b]);
  fit.objective = cost[b];
  return fit;
}

}  // namespace ifno
