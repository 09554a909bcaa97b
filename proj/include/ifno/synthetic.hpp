#pragma once

// Seeded ground-truth operator standing in for the tissue: per displacement
// component solve div(mu grad w) = 0 with Dirichlet data, mu a smooth
// heterogeneity in [mu_min, mu_max], then apply the zero-preserving
// nonlinearity u = w + alpha w |w| / s. Boundary data are given as u; the
// operator inverts the nonlinearity on the boundary before the solve, so the
// returned field matches the loading exactly on the boundary.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <vector>

#include "json.hpp"

#include "ifno/dataset.hpp"
#include "ifno/errors.hpp"
#include "ifno/fung.hpp"
#include "ifno/grid.hpp"
#include "ifno/protocols.hpp"
#include "ifno/rng.hpp"

namespace ifno {

struct OperatorConfig {
  int nx = 21;
  int ny = 21;
  Extent extent{5.5, 5.5};
  double nonlinearity = 0.3;  // alpha
  double scale = 2.75;        // s, mm
  double mu_min = 1.0;
  double mu_max = 3.0;
  int bumps = 4;              // Gaussian bumps per component; 0 gives mu = mu_min
  std::uint64_t seed = 0;

  void validate() const {
    require(nx >= 3 && ny >= 3, "synthetic operator: grid must be at least 3x3");
    require(extent.x > 0.0 && extent.y > 0.0, "synthetic operator: extent must be positive");
    require(nonlinearity >= 0.0, "synthetic operator: nonlinearity must be >= 0");
    require(scale > 0.0, "synthetic operator: scale must be positive");
    require(mu_min > 0.0 && mu_max >= mu_min, "synthetic operator: need 0 < mu_min <= mu_max");
    require(bumps >= 0, "synthetic operator: bumps must be >= 0");
  }
};

/// Nodal conductivity in [mu_min, mu_max]: normalized sum of Gaussian bumps.
inline std::vector<double> heterogeneity_field(const OperatorConfig& cfg, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(cfg.nx) * cfg.ny;
  std::vector<double> g(n, 0.0);
  if (cfg.bumps == 0) return std::vector<double>(n, cfg.mu_min);
  const double side = std::min(cfg.extent.x, cfg.extent.y);
  for (int b = 0; b < cfg.bumps; ++b) {
    const double cx = rng.uniform(0.0, cfg.extent.x), cy = rng.uniform(0.0, cfg.extent.y);
    const double r = rng.uniform(0.15, 0.35) * side, a = rng.uniform(0.3, 1.0);
    for (int i = 0; i < cfg.nx; ++i)
      for (int j = 0; j < cfg.ny; ++j) {
        const double dx = i * cfg.extent.x / (cfg.nx - 1) - cx, dy = j * cfg.extent.y / (cfg.ny - 1) - cy;
        g[node_index(i, j, cfg.ny)] += a * std::exp(-(dx * dx + dy * dy) / (2.0 * r * r));
      }
  }
  const double gmax = *std::max_element(g.begin(), g.end());
  for (double& v : g) v = cfg.mu_min + (cfg.mu_max - cfg.mu_min) * v / gmax;
  return g;
}

class SyntheticOperator {
 public:
  explicit SyntheticOperator(const OperatorConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    for (int c = 0; c < 2; ++c) {
      mu_[static_cast<std::size_t>(c)] = heterogeneity_field(cfg, rng);
      factor(c);
    }
  }

  const OperatorConfig& config() const { return cfg_; }
  const std::vector<double>& conductivity(int component) const { return mu_.at(static_cast<std::size_t>(component)); }

  double nonlinear(double w) const { return w + cfg_.nonlinearity * w * std::abs(w) / cfg_.scale; }

  /// Inverse of the odd, increasing map w -> w + alpha w |w| / s.
  double inverse_nonlinear(double u) const {
    if (cfg_.nonlinearity == 0.0) return u;
    const double k = cfg_.nonlinearity / cfg_.scale, a = std::abs(u);
    const double w = 2.0 * a / (1.0 + std::sqrt(1.0 + 4.0 * k * a));
    return std::copysign(w, u);
  }

  GridField apply(const BoundaryLoading& b) const {
    if (b.nx() != cfg_.nx || b.ny() != cfg_.ny) throw ConfigError("synthetic operator: loading grid mismatch");
    const int nx = cfg_.nx, ny = cfg_.ny;
    const auto bnodes = boundary_nodes(nx, ny);
    std::vector<double> out(static_cast<std::size_t>(nx) * ny * 2, 0.0);
    for (int c = 0; c < 2; ++c) {
      std::vector<double> w(static_cast<std::size_t>(nx) * ny, 0.0);
      for (std::size_t k = 0; k < bnodes.size(); ++k)
        w[node_index(bnodes[k].first, bnodes[k].second, ny)] = inverse_nonlinear(c == 0 ? b.ux(k) : b.uy(k));
      const auto& mu = mu_[static_cast<std::size_t>(c)];
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_interior());
      for (int i = 1; i < nx - 1; ++i)
        for (int j = 1; j < ny - 1; ++j) {
          const int row = interior_index(i, j);
          for (const auto& [di, dj, inv_h2] : neighbours()) {
            const int ii = i + di, jj = j + dj;
            if (!is_boundary_node(ii, jj, nx, ny)) continue;
            rhs[row] += face(mu, i, j, ii, jj) * inv_h2 * w[node_index(ii, jj, ny)];
          }
        }
      const Eigen::VectorXd x = solver_[static_cast<std::size_t>(c)]->solve(rhs);
      if (solver_[static_cast<std::size_t>(c)]->info() != Eigen::Success || !x.allFinite())
        throw NumericalError("synthetic operator: linear solve failed");
      for (int i = 1; i < nx - 1; ++i)
        for (int j = 1; j < ny - 1; ++j) w[node_index(i, j, ny)] = x[interior_index(i, j)];
      for (std::size_t n = 0; n < w.size(); ++n) out[n * 2 + static_cast<std::size_t>(c)] = nonlinear(w[n]);
      for (std::size_t k = 0; k < bnodes.size(); ++k)
        out[node_index(bnodes[k].first, bnodes[k].second, ny) * 2 + static_cast<std::size_t>(c)] =
            c == 0 ? b.ux(k) : b.uy(k);
    }
    return GridField(nx, ny, 2, cfg_.extent, std::move(out));
  }

 private:
  int n_interior() const { return (cfg_.nx - 2) * (cfg_.ny - 2); }
  int interior_index(int i, int j) const { return (i - 1) * (cfg_.ny - 2) + (j - 1); }

  std::array<std::tuple<int, int, double>, 4> neighbours() const {
    const double hx = cfg_.extent.x / (cfg_.nx - 1), hy = cfg_.extent.y / (cfg_.ny - 1);
    return {{{-1, 0, 1.0 / (hx * hx)}, {1, 0, 1.0 / (hx * hx)}, {0, -1, 1.0 / (hy * hy)}, {0, 1, 1.0 / (hy * hy)}}};
  }

  double face(const std::vector<double>& mu, int i, int j, int ii, int jj) const {
    return 0.5 * (mu[node_index(i, j, cfg_.ny)] + mu[node_index(ii, jj, cfg_.ny)]);
  }

  void factor(int c) {
    const int nx = cfg_.nx, ny = cfg_.ny;
    const auto& mu = mu_[static_cast<std::size_t>(c)];
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 1; i < nx - 1; ++i)
      for (int j = 1; j < ny - 1; ++j) {
        const int row = interior_index(i, j);
        double diag = 0.0;
        for (const auto& [di, dj, inv_h2] : neighbours()) {
          const int ii = i + di, jj = j + dj;
          const double a = face(mu, i, j, ii, jj) * inv_h2;
          diag += a;
          if (!is_boundary_node(ii, jj, nx, ny)) trip.emplace_back(row, interior_index(ii, jj), -a);
        }
        trip.emplace_back(row, row, diag);
      }
    Eigen::SparseMatrix<double> a(n_interior(), n_interior());
    a.setFromTriplets(trip.begin(), trip.end());
    auto s = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    s->compute(a);
    if (s->info() != Eigen::Success) throw NumericalError("synthetic operator: factorization failed");
    solver_[static_cast<std::size_t>(c)] = std::move(s);
  }

  OperatorConfig cfg_;
  std::array<std::vector<double>, 2> mu_;
  std::array<std::shared_ptr<const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>, 2> solver_;
};

struct SyntheticConfig {
  OperatorConfig op;
  std::vector<int> protocols{1, 2, 3, 4, 5, 6, 7};
  int cycles = 3;
  int frames_per_cycle = 7;       // loading/unloading frames, the zero-load frames excluded
  double stretch_jitter = 0.03;   // relative per-cycle perturbation of the peak stretch excess
  double boundary_jitter = 0.02;  // per-frame smooth boundary perturbation, fraction of the scale
  double noise_std = 0.0;         // additive field noise, mm
  FungParams stress_model{5.0, 2.0, 1.5, 0.5};
  int lipschitz_pairs = 64;
  std::uint64_t seed = 0;

  void validate() const {
    op.validate();
    require(!protocols.empty(), "synthetic: at least one protocol required");
    for (int p : protocols) protocol(p);
    require(cycles >= 1, "synthetic: cycles must be >= 1");
    require(frames_per_cycle >= 1, "synthetic: frames_per_cycle must be >= 1");
    require(stretch_jitter >= 0.0 && stretch_jitter < 1.0, "synthetic: stretch_jitter must lie in [0, 1)");
    require(boundary_jitter >= 0.0, "synthetic: boundary_jitter must be >= 0");
    require(noise_std >= 0.0, "synthetic: noise_std must be >= 0");
    require(stress_model.admissible(), "synthetic: stress model parameters are not admissible");
    require(lipschitz_pairs >= 0, "synthetic: lipschitz_pairs must be >= 0");
  }

  std::size_t sample_count() const {
    return protocols.size() * static_cast<std::size_t>(cycles) * static_cast<std::size_t>(frames_per_cycle);
  }
};

/// Load fraction of frame k (1-based) in a cycle of n frames: a triangle ramp
/// 0 -> 1 -> 0 sampled without its two zero endpoints.
inline double ramp_fraction(int k, int n) { return 1.0 - std::abs(2.0 * k / (n + 1) - 1.0); }

inline double boundary_norm(const BoundaryLoading& b) {
  return std::sqrt(squared_l2_norm(zero_pad_embed(b, b.nx(), b.ny())));
}

inline BoundaryLoading boundary_difference(const BoundaryLoading& a, const BoundaryLoading& b) {
  std::vector<double> v(a.values().size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = a.values()[k] - b.values()[k];
  return BoundaryLoading(a.nx(), a.ny(), a.extent(), std::move(v));
}

/// Largest ratio ||G[b1] - G[b2]|| / ||b1 - b2|| over seeded random pairs of
/// the given loadings; norms are trapezoidal L2 over the grid, boundary data
/// measured through the zero-padded embedding.
inline double empirical_lipschitz(const SyntheticOperator& op, const std::vector<BoundaryLoading>& loadings,
                                  int pairs, std::uint64_t seed) {
  if (loadings.size() < 2 || pairs == 0) return 0.0;
  Rng rng(seed);
  double c = 0.0;
  for (int p = 0; p < pairs; ++p) {
    const std::size_t a = rng.index(loadings.size());
    std::size_t b = rng.index(loadings.size() - 1);
    if (b >= a) ++b;
    const double db = boundary_norm(boundary_difference(loadings[a], loadings[b]));
    if (db == 0.0) continue;
    const double du = std::sqrt(squared_l2_distance(op.apply(loadings[a]), op.apply(loadings[b])));
    c = std::max(c, du / db);
  }
  return c;
}

/// Biaxial ramp loading: affine stretch displacement ((l1-1) x, (l2-1) y)
/// plus a smooth perturbation proportional to the load fraction.
inline BoundaryLoading ramp_loading(const OperatorConfig& op, double lambda1, double lambda2, double fraction,
                                    const std::array<double, 6>& wiggle, double jitter) {
  const auto nodes = boundary_nodes(op.nx, op.ny);
  std::vector<double> v;
  v.reserve(nodes.size() * 2);
  const double amp = jitter * op.scale * fraction, pi = std::numbers::pi;
  for (auto [i, j] : nodes) {
    const double x = i * op.extent.x / (op.nx - 1), y = j * op.extent.y / (op.ny - 1);
    const double sx = x / op.extent.x, sy = y / op.extent.y;
    const double px = wiggle[0] * std::sin(pi * sx) + wiggle[1] * std::sin(pi * sy) + wiggle[2] * std::sin(2 * pi * sx) * sy;
    const double py = wiggle[3] * std::sin(pi * sy) + wiggle[4] * std::sin(pi * sx) + wiggle[5] * std::sin(2 * pi * sy) * sx;
    v.push_back((lambda1 - 1.0) * x + amp * px);
    v.push_back((lambda2 - 1.0) * y + amp * py);
  }
  return BoundaryLoading(op.nx, op.ny, op.extent, std::move(v));
}

inline nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"nx", c.op.nx},
          {"ny", c.op.ny},
          {"extent", {c.op.extent.x, c.op.extent.y}},
          {"nonlinearity", c.op.nonlinearity},
          {"scale", c.op.scale},
          {"mu_range", {c.op.mu_min, c.op.mu_max}},
          {"bumps", c.op.bumps},
          {"operator_seed", c.op.seed},
          {"protocols", c.protocols},
          {"cycles", c.cycles},
          {"frames_per_cycle", c.frames_per_cycle},
          {"stretch_jitter", c.stretch_jitter},
          {"boundary_jitter", c.boundary_jitter},
          {"noise_std", c.noise_std},
          {"stress_model", {c.stress_model.c, c.stress_model.a1, c.stress_model.a2, c.stress_model.a3}},
          {"lipschitz_pairs", c.lipschitz_pairs},
          {"seed", c.seed}};
}

/// Frames per protocol: `cycles` loading/unloading ramps of
/// `frames_per_cycle` frames each. Stress records come from the Fung stress
/// model at each frame's nominal stretches.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const SyntheticOperator op(cfg.op);
  Rng rng(cfg.seed);
  Dataset d;
  d.nx = cfg.op.nx;
  d.ny = cfg.op.ny;
  d.extent = cfg.op.extent;
  d.seed = cfg.seed;
  std::vector<BoundaryLoading> loadings;
  for (int pid : cfg.protocols) {
    const ProtocolSpec& spec = protocol(pid);
    for (int cycle = 0; cycle < cfg.cycles; ++cycle) {
      const double jx = 1.0 + cfg.stretch_jitter * rng.uniform(-1.0, 1.0);
      const double jy = 1.0 + cfg.stretch_jitter * rng.uniform(-1.0, 1.0);
      for (int k = 1; k <= cfg.frames_per_cycle; ++k) {
        const double s = ramp_fraction(k, cfg.frames_per_cycle);
        const double l1 = 1.0 + s * (spec.max_stretch_x - 1.0) * jx;
        const double l2 = 1.0 + s * (spec.max_stretch_y - 1.0) * jy;
        std::array<double, 6> wiggle;
        for (double& w : wiggle) w = rng.uniform(-1.0, 1.0);
        BoundaryLoading b = ramp_loading(cfg.op, l1, l2, s, wiggle, cfg.boundary_jitter);
        GridField field = op.apply(b);
        if (cfg.noise_std > 0.0) {
          std::vector<double> v(field.values().begin(), field.values().end());
          for (double& x : v) x += cfg.noise_std * rng.normal();
          field = GridField(d.nx, d.ny, 2, d.extent, std::move(v));
          b = extract_boundary(field);
        }
        const auto pk = pk_stress(l1, l2, cfg.stress_model);
        Sample smp;
        smp.boundary = b;
        smp.field = std::move(field);
        smp.protocol_id = pid;
        smp.cycle = cycle;
        smp.frame_index = cycle * (cfg.frames_per_cycle + 1) + k;
        smp.provenance = Provenance::synthetic;
        smp.stress = StressStretchRecord{l1, l2, pk[0], pk[1]};
        loadings.push_back(b);
        d.samples.push_back(std::move(smp));
      }
    }
  }
  d.metadata = {{"source", "synthetic"},
                {"generator", to_json(cfg)},
                {"lipschitz_constant", empirical_lipschitz(op, loadings, cfg.lipschitz_pairs, cfg.seed + 1)}};
  return d;
}

}  // namespace ifno
