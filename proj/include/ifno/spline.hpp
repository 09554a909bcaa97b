#pragma once

// Not-a-knot cubic splines and separable resampling of structured scattered
// data onto the model grid.

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <vector>

#include "ifno/errors.hpp"

namespace ifno {

/// Linear map from knot values to spline values at the query points.
/// Not-a-knot end conditions: cubics are reproduced exactly.
inline Eigen::MatrixXd spline_matrix(const std::vector<double>& knots, const std::vector<double>& queries) {
  const int n = static_cast<int>(knots.size());
  if (n < 4) throw DataError("cubic spline needs at least 4 points per axis, got " + std::to_string(n));
  for (int i = 1; i < n; ++i)
    if (!(knots[static_cast<std::size_t>(i)] > knots[static_cast<std::size_t>(i - 1)]))
      throw DataError("cubic spline knots must be strictly increasing");
  std::vector<double> h(static_cast<std::size_t>(n - 1));
  for (int i = 0; i + 1 < n; ++i) h[static_cast<std::size_t>(i)] = knots[static_cast<std::size_t>(i + 1)] - knots[static_cast<std::size_t>(i)];

  // Second derivatives M = A^{-1} B y.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n), b = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i + 1 < n; ++i) {
    const double h0 = h[static_cast<std::size_t>(i - 1)], h1 = h[static_cast<std::size_t>(i)];
    a(i, i - 1) = h0;
    a(i, i) = 2.0 * (h0 + h1);
    a(i, i + 1) = h1;
    b(i, i - 1) = 6.0 / h0;
    b(i, i) = -6.0 / h0 - 6.0 / h1;
    b(i, i + 1) = 6.0 / h1;
  }
  // third derivative continuous across the second and penultimate knots
  a(0, 0) = h[1];
  a(0, 1) = -(h[0] + h[1]);
  a(0, 2) = h[0];
  const double hm = h[static_cast<std::size_t>(n - 3)], hl = h[static_cast<std::size_t>(n - 2)];
  a(n - 1, n - 3) = hl;
  a(n - 1, n - 2) = -(hm + hl);
  a(n - 1, n - 1) = hm;
  const Eigen::MatrixXd m = a.fullPivLu().solve(b);

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(queries.size()), n);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double t = queries[q];
    auto it = std::upper_bound(knots.begin(), knots.end(), t);
    int i = static_cast<int>(it - knots.begin()) - 1;
    i = std::clamp(i, 0, n - 2);
    const double hi = h[static_cast<std::size_t>(i)];
    const double ca = (knots[static_cast<std::size_t>(i + 1)] - t) / hi, cb = (t - knots[static_cast<std::size_t>(i)]) / hi;
    const auto row = static_cast<Eigen::Index>(q);
    s(row, i) += ca;
    s(row, i + 1) += cb;
    const double fa = (ca * ca * ca - ca) * hi * hi / 6.0, fb = (cb * cb * cb - cb) * hi * hi / 6.0;
    if (fa != 0.0) s.row(row) += fa * m.row(i);
    if (fb != 0.0) s.row(row) += fb * m.row(i + 1);
  }
  return s;
}

/// One-dimensional interpolation of y at the queries.
inline std::vector<double> spline_interpolate(const std::vector<double>& knots, const std::vector<double>& y,
                                              const std::vector<double>& queries) {
  if (y.size() != knots.size()) throw DataError("spline: value count does not match knot count");
  const Eigen::VectorXd v = spline_matrix(knots, queries) * Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return {v.data(), v.data() + v.size()};
}

/// Tensor-product interpolation of values given on knots_x x knots_y
/// (row-major, x index slowest) at query_x x query_y, same layout.
inline Eigen::MatrixXd spline_resample_2d(const std::vector<double>& knots_x, const std::vector<double>& knots_y,
                                          const Eigen::MatrixXd& values, const std::vector<double>& query_x,
                                          const std::vector<double>& query_y) {
  if (values.rows() != static_cast<Eigen::Index>(knots_x.size()) || values.cols() != static_cast<Eigen::Index>(knots_y.size()))
    throw DataError("spline: value grid does not match the knots");
  return spline_matrix(knots_x, query_x) * values * spline_matrix(knots_y, query_y).transpose();
}

}  // namespace ifno
