#pragma once

// Total-Lagrangian plane-stress membrane with the Fung energy on bilinear
// quadrilaterals over the structured node grid. All boundary nodes carry
// Dirichlet data; Newton-Raphson with the consistent tangent and load stepping.
//
// Energy per unit reference area: Lz [psi(E11, E22) + mu_s E12^2] with
// mu_s = shear_regularization * c. psi has no shear dependence, so without
// mu_s the tangent would be singular.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/fung.hpp"
#include "ifno/grid.hpp"

namespace ifno {

struct FemConfig {
  double shear_regularization = 1e-3;  // mu_s / c
  double thickness = 0.4;              // mm
  int load_steps = 10;
  int max_halvings = 8;
  int max_newton_iterations = 25;
  double tolerance = 1e-9;  // relative to c * thickness * side length

  void validate() const {
    require(shear_regularization > 0.0, "fem: shear_regularization must be positive");
    require(thickness > 0.0, "fem: thickness must be positive");
    require(load_steps >= 1, "fem: load_steps must be >= 1");
    require(max_halvings >= 0, "fem: max_halvings must be >= 0");
    require(max_newton_iterations >= 1, "fem: max_newton_iterations must be >= 1");
    require(tolerance > 0.0, "fem: tolerance must be positive");
  }
};

struct FemStep {
  double load_factor = 0.0;
  std::vector<double> residuals;  // free-dof residual 2-norm before each update and at exit
};

struct FemResult {
  GridField field;
  std::vector<FemStep> steps;
  double reference_force = 0.0;
};

namespace detail {

class FungMembrane {
 public:
  FungMembrane(int nx, int ny, Extent extent, const FungParams& p, const FemConfig& cfg)
      : nx_(nx), ny_(ny), p_(p), mu_s_(cfg.shear_regularization * p.c), lz_(cfg.thickness) {
    const double hx = extent.x / (nx - 1), hy = extent.y / (ny - 1);
    det_w_ = hx * hy / 4.0;
    const double g = 1.0 / std::sqrt(3.0);
    const std::array<double, 4> xi_a{-1, 1, 1, -1}, eta_a{-1, -1, 1, 1};
    int q = 0;
    for (double eta : {-g, g})
      for (double xi : {-g, g}) {
        for (int a = 0; a < 4; ++a) {
          grad_[q][a][0] = 0.25 * xi_a[a] * (1.0 + eta_a[a] * eta) * 2.0 / hx;
          grad_[q][a][1] = 0.25 * eta_a[a] * (1.0 + xi_a[a] * xi) * 2.0 / hy;
        }
        ++q;
      }
    free_.assign(static_cast<std::size_t>(2 * nx * ny), -1);
    int k = 0;
    for (int i = 1; i < nx - 1; ++i)
      for (int j = 1; j < ny - 1; ++j) {
        const auto n = node_index(i, j, ny);
        free_[2 * n] = k++;
        free_[2 * n + 1] = k++;
      }
    n_free_ = k;
  }

  int free_count() const { return n_free_; }
  int free_index(std::size_t dof) const { return free_[dof]; }

  /// Residual on free dofs and, if requested, the free-free tangent. With
  /// `increment` given, `coupling` receives K_fb * increment (prescribed dofs).
  void assemble(const std::vector<double>& u, Eigen::VectorXd& r, Eigen::SparseMatrix<double>* k,
                const std::vector<double>* increment = nullptr, Eigen::VectorXd* coupling = nullptr) const {
    r.setZero(n_free_);
    if (coupling) coupling->setZero(n_free_);
    std::vector<Eigen::Triplet<double>> trip;
    if (k) trip.reserve(static_cast<std::size_t>((nx_ - 1) * (ny_ - 1)) * 64);
    for (int ei = 0; ei < nx_ - 1; ++ei)
      for (int ej = 0; ej < ny_ - 1; ++ej) {
        const std::array<std::size_t, 4> nodes{node_index(ei, ej, ny_), node_index(ei + 1, ej, ny_),
                                               node_index(ei + 1, ej + 1, ny_), node_index(ei, ej + 1, ny_)};
        double re[8] = {};
        double ke[8][8] = {};
        for (int q = 0; q < 4; ++q) {
          double f[2][2] = {{1.0, 0.0}, {0.0, 1.0}};
          for (int a = 0; a < 4; ++a)
            for (int i = 0; i < 2; ++i)
              for (int jj = 0; jj < 2; ++jj) f[i][jj] += u[2 * nodes[a] + i] * grad_[q][a][jj];
          const double e11 = 0.5 * (f[0][0] * f[0][0] + f[1][0] * f[1][0] - 1.0);
          const double e22 = 0.5 * (f[0][1] * f[0][1] + f[1][1] * f[1][1] - 1.0);
          const double e12 = 0.5 * (f[0][0] * f[0][1] + f[1][0] * f[1][1]);
          const auto s_axial = fung_second_pk(e11, e22, p_);
          const double s[3] = {s_axial[0], s_axial[1], mu_s_ * e12};
          double b[3][8];
          for (int a = 0; a < 4; ++a) {
            const double n1 = grad_[q][a][0], n2 = grad_[q][a][1];
            b[0][2 * a] = f[0][0] * n1;
            b[0][2 * a + 1] = f[1][0] * n1;
            b[1][2 * a] = f[0][1] * n2;
            b[1][2 * a + 1] = f[1][1] * n2;
            b[2][2 * a] = f[0][0] * n2 + f[0][1] * n1;
            b[2][2 * a + 1] = f[1][0] * n2 + f[1][1] * n1;
          }
          const double w = det_w_ * lz_;
          for (int m = 0; m < 8; ++m) re[m] += w * (b[0][m] * s[0] + b[1][m] * s[1] + b[2][m] * s[2]);
          if (!k) continue;
          const auto t = fung_tangent(e11, e22, p_);
          const double d[3][3] = {{t[0], t[1], 0.0}, {t[1], t[2], 0.0}, {0.0, 0.0, 0.5 * mu_s_}};
          for (int m = 0; m < 8; ++m) {
            double db[3];
            for (int r3 = 0; r3 < 3; ++r3) db[r3] = d[r3][0] * b[0][m] + d[r3][1] * b[1][m] + d[r3][2] * b[2][m];
            for (int n = 0; n < 8; ++n) ke[n][m] += w * (b[0][n] * db[0] + b[1][n] * db[1] + b[2][n] * db[2]);
          }
          for (int a = 0; a < 4; ++a)
            for (int bb = 0; bb < 4; ++bb) {
              const double* ga = grad_[q][a];
              const double* gb = grad_[q][bb];
              const double geo = ga[0] * (s[0] * gb[0] + s[2] * gb[1]) + ga[1] * (s[2] * gb[0] + s[1] * gb[1]);
              ke[2 * a][2 * bb] += w * geo;
              ke[2 * a + 1][2 * bb + 1] += w * geo;
            }
        }
        for (int m = 0; m < 8; ++m) {
          const int fm = free_[2 * nodes[m / 2] + static_cast<std::size_t>(m % 2)];
          if (fm < 0) continue;
          r[fm] += re[m];
          if (!k) continue;
          for (int n = 0; n < 8; ++n) {
            const std::size_t dof = 2 * nodes[n / 2] + static_cast<std::size_t>(n % 2);
            const int fn = free_[dof];
            if (fn >= 0) trip.emplace_back(fm, fn, ke[m][n]);
            else if (increment) (*coupling)[fm] += ke[m][n] * (*increment)[dof];
          }
        }
      }
    if (k) {
      k->resize(n_free_, n_free_);
      k->setFromTriplets(trip.begin(), trip.end());
    }
  }

 private:
  int nx_, ny_;
  FungParams p_;
  double mu_s_, lz_, det_w_;
  double grad_[4][4][2] = {};
  std::vector<int> free_;
  int n_free_ = 0;
};

}  // namespace detail

/// Static equilibrium with b prescribed on every boundary node; returns the
/// full displacement field and the per-load-step Newton residual history.
inline FemResult fem_solve_fung_detailed(const BoundaryLoading& b, const FungParams& p, const FemConfig& cfg = {}) {
  cfg.validate();
  if (!p.admissible()) throw ConfigError("fem: Fung parameters violate c, a1, a2 > 0 and a1 a2 > a3^2");
  const int nx = b.nx(), ny = b.ny();
  if (nx < 3 || ny < 3) throw ConfigError("fem: grid needs at least one interior node");
  const detail::FungMembrane model(nx, ny, b.extent(), p, cfg);
  const auto bnodes = boundary_nodes(nx, ny);
  const std::size_t ndof = static_cast<std::size_t>(2 * nx * ny);

  FemResult result;
  result.reference_force = p.c * cfg.thickness * std::max(b.extent().x, b.extent().y);
  const double tol = cfg.tolerance * result.reference_force;

  std::vector<double> u(ndof, 0.0);
  auto set_boundary = [&](double t) {
    for (std::size_t k = 0; k < bnodes.size(); ++k) {
      const auto n = node_index(bnodes[k].first, bnodes[k].second, ny);
      u[2 * n] = t * b.ux(k);
      u[2 * n + 1] = t * b.uy(k);
    }
  };

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool pattern_ready = false;
  Eigen::VectorXd r;
  Eigen::SparseMatrix<double> kmat;

  auto factorize = [&]() -> bool {
    if (!pattern_ready) {
      lu.analyzePattern(kmat);
      pattern_ready = true;
    }
    lu.factorize(kmat);
    return lu.info() == Eigen::Success;
  };

  // Newton at load factor t starting from u; false on failure (u is clobbered).
  auto newton = [&](double t, FemStep& log) -> bool {
    set_boundary(t);
    for (int it = 0; it <= cfg.max_newton_iterations; ++it) {
      model.assemble(u, r, &kmat);
      const double rn = r.norm();
      log.residuals.push_back(rn);
      if (!std::isfinite(rn)) return false;
      if (rn < tol) return true;
      if (it == cfg.max_newton_iterations) return false;
      if (!factorize()) return false;
      const Eigen::VectorXd du = lu.solve(r);
      if (!du.allFinite()) return false;
      for (std::size_t dof = 0; dof < ndof; ++dof) {
        const int f = model.free_index(dof);
        if (f >= 0) u[dof] -= du[f];
      }
    }
    return false;
  };

  // Linearized response to the boundary increment from t to t_next, taken
  // about the converged state at t.
  std::vector<double> increment(ndof, 0.0);
  Eigen::VectorXd coupling;
  auto predict = [&](double t, double t_next) -> bool {
    std::fill(increment.begin(), increment.end(), 0.0);
    for (std::size_t k = 0; k < bnodes.size(); ++k) {
      const auto n = node_index(bnodes[k].first, bnodes[k].second, ny);
      increment[2 * n] = (t_next - t) * b.ux(k);
      increment[2 * n + 1] = (t_next - t) * b.uy(k);
    }
    model.assemble(u, r, &kmat, &increment, &coupling);
    if (!factorize()) return false;
    const Eigen::VectorXd du = lu.solve(r + coupling);
    if (!du.allFinite()) return false;
    for (std::size_t dof = 0; dof < ndof; ++dof) {
      const int f = model.free_index(dof);
      if (f >= 0) u[dof] -= du[f];
    }
    return true;
  };

  double t = 0.0, dt = 1.0 / cfg.load_steps;
  int halvings = 0;
  while (t < 1.0) {
    double t_next = t + dt;
    if (t_next > 1.0 - 1e-12) t_next = 1.0;
    const std::vector<double> saved = u;
    FemStep log;
    log.load_factor = t_next;
    bool ok = false;
    try {
      ok = predict(t, t_next) && newton(t_next, log);
    } catch (const NumericalError&) {
      ok = false;
    }
    if (ok) {
      result.steps.push_back(std::move(log));
      t = t_next;
      continue;
    }
    u = saved;
    if (++halvings > cfg.max_halvings)
      throw NumericalError("fem: Newton failed to converge; last converged load factor " + std::to_string(t));
    dt *= 0.5;
  }

  // boundary values exactly as prescribed
  set_boundary(1.0);
  result.field = GridField(nx, ny, 2, b.extent(), std::move(u));
  return result;
}

inline GridField fem_solve_fung(const BoundaryLoading& b, const FungParams& p, const FemConfig& cfg = {}) {
  return fem_solve_fung_detailed(b, p, cfg).field;
}

}  // namespace ifno
