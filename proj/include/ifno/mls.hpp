#pragma once

// Moving-least-squares smoothing with a linear basis and cubic B-spline
// weights. Shape functions are evaluated in coordinates centred on the
// evaluation point: Psi_k(x) = e1^T M(x)^{-1} w_k p(x_k - x), with
// M(x) = sum_k w_k p p^T and p(d) = (1, d_x / rho, d_y / rho).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/tracking.hpp"

namespace ifno {

struct MlsConfig {
  double radius_factor = 2.5;  // support radius in nodal spacings
  double spacing = 0.0;        // nodal spacing, mm; 0 estimates it from the points
  double min_rcond = 1e-10;    // smaller reciprocal condition of M counts as singular

  void validate() const {
    require(radius_factor > 1.0, "mls: radius_factor must exceed 1 so every point has neighbours");
    require(spacing >= 0.0, "mls: spacing must be >= 0");
    require(min_rcond > 0.0, "mls: min_rcond must be positive");
  }
};

/// Cubic B-spline kernel on r = |d| / rho, supported on [0, 1].
inline double cubic_bspline_weight(double r) {
  r = std::abs(r);
  if (r <= 0.5) return 2.0 / 3.0 - 4.0 * r * r + 4.0 * r * r * r;
  if (r <= 1.0) return 4.0 / 3.0 - 4.0 * r + 4.0 * r * r - 4.0 / 3.0 * r * r * r;
  return 0.0;
}

/// Mean nearest-neighbour distance.
inline double estimate_spacing(const std::vector<Point2>& pts) {
  if (pts.size() < 2) throw DataError("mls: need at least two points");
  double sum = 0.0;
  for (std::size_t a = 0; a < pts.size(); ++a) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < pts.size(); ++b) {
      if (a == b) continue;
      best = std::min(best, std::hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1]));
    }
    sum += best;
  }
  return sum / static_cast<double>(pts.size());
}

struct MlsShape {
  std::vector<std::size_t> neighbours;
  std::vector<double> values;  // Psi_k for each neighbour
  bool singular = false;
};

inline MlsShape mls_shape_functions(const Point2& x, const std::vector<Point2>& pts, double rho, double min_rcond) {
  MlsShape s;
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  std::vector<Eigen::Vector3d> basis;
  std::vector<double> weights;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double dx = (pts[k][0] - x[0]) / rho, dy = (pts[k][1] - x[1]) / rho;
    const double w = cubic_bspline_weight(std::hypot(dx, dy));
    if (w <= 0.0) continue;
    const Eigen::Vector3d p(1.0, dx, dy);
    m += w * p * p.transpose();
    s.neighbours.push_back(k);
    basis.push_back(p);
    weights.push_back(w);
  }
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  const auto& sv = svd.singularValues();
  if (s.neighbours.size() < 3 || !(sv(0) > 0.0) || sv(2) / sv(0) < min_rcond) {
    s.singular = true;
    return s;
  }
  // row 0 of M^{-1}, M symmetric positive definite
  const Eigen::Vector3d c = m.ldlt().solve(Eigen::Vector3d::UnitX());
  s.values.resize(s.neighbours.size());
  for (std::size_t q = 0; q < s.neighbours.size(); ++q) s.values[q] = weights[q] * c.dot(basis[q]);
  return s;
}

struct MlsResult {
  std::vector<Point2> values;
  std::vector<std::size_t> singular_nodes;  // kept at their original values
};

/// u_smooth(x_i) = sum_k Psi_k(x_i) u(x_k) at every input point.
inline MlsResult mls_smooth_values(const std::vector<Point2>& pts, const std::vector<Point2>& u, const MlsConfig& cfg) {
  cfg.validate();
  if (pts.size() != u.size()) throw DataError("mls: point and value counts differ");
  const double h = cfg.spacing > 0.0 ? cfg.spacing : estimate_spacing(pts);
  const double rho = cfg.radius_factor * h;
  MlsResult r;
  r.values.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const MlsShape s = mls_shape_functions(pts[i], pts, rho, cfg.min_rcond);
    if (s.singular) {
      r.values[i] = u[i];
      r.singular_nodes.push_back(i);
      continue;
    }
    Point2 acc{0.0, 0.0};
    for (std::size_t q = 0; q < s.neighbours.size(); ++q) {
      acc[0] += s.values[q] * u[s.neighbours[q]][0];
      acc[1] += s.values[q] * u[s.neighbours[q]][1];
    }
    r.values[i] = acc;
  }
  return r;
}

/// Smooths every sample; throws DataError naming the nodes whose moment
/// matrix is singular.
inline std::vector<ScatteredSample> mls_smooth(const std::vector<ScatteredSample>& samples, const MlsConfig& cfg) {
  std::vector<ScatteredSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    MlsResult r = mls_smooth_values(s.points, s.displacement, cfg);
    if (!r.singular_nodes.empty()) {
      std::string ids;
      for (std::size_t k = 0; k < r.singular_nodes.size() && k < 10; ++k)
        ids += (k ? "," : "") + std::to_string(r.singular_nodes[k]);
      throw DataError("mls: singular moment matrix at " + std::to_string(r.singular_nodes.size()) +
                      " node(s) of frame " + std::to_string(s.frame_index) + " (first: " + ids + ")");
    }
    ScatteredSample t = s;
    t.displacement = std::move(r.values);
    t.provenance = Provenance::smoothed;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ifno
