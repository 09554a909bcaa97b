#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ifno/fem.hpp"

using namespace ifno;

namespace {

const FungParams kTissue{10.0, 5.0, 3.0, 1.0};

BoundaryLoading loading_from(int n, double side, auto&& disp) {
  const Extent e{side, side};
  std::vector<double> v;
  for (auto [i, j] : boundary_nodes(n, n)) {
    const auto u = disp(i * side / (n - 1), j * side / (n - 1));
    v.push_back(u[0]);
    v.push_back(u[1]);
  }
  return BoundaryLoading(n, n, e, std::move(v));
}

std::array<double, 2> stretch_with_bulge(double x, double y) {
  const double pi = std::numbers::pi, s = 5.5;
  return {0.2 * x + 0.15 * std::sin(pi * y / s) * std::sin(pi * x / s),
          0.15 * y + 0.1 * std::sin(2 * pi * x / s) * y / s};
}

}  // namespace

TEST(Fem, ZeroLoadingGivesZeroField) {
  const GridField f = fem_solve_fung(BoundaryLoading(7, 7, {5.5, 5.5}), kTissue);
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fem, HomogeneousDeformationPatchTest) {
  for (const auto& grad : {std::array<double, 4>{0.1, 0.0, 0.0, 0.05}, std::array<double, 4>{0.25, 0.04, -0.03, 0.12}}) {
    const auto affine = [&](double x, double y) { return std::array<double, 2>{grad[0] * x + grad[1] * y, grad[2] * x + grad[3] * y}; };
    const int n = 9;
    const GridField f = fem_solve_fung(loading_from(n, 5.5, affine), kTissue);
    double worst = 0.0;
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) {
        const auto u = affine(i * 5.5 / (n - 1), j * 5.5 / (n - 1));
        worst = std::max({worst, std::abs(f(i, j, 0) - u[0]), std::abs(f(i, j, 1) - u[1])});
      }
    EXPECT_LT(worst, 1e-8);
  }
}

TEST(Fem, BoundaryValuesAreExact) {
  const BoundaryLoading b = loading_from(11, 5.5, stretch_with_bulge);
  EXPECT_EQ(extract_boundary(fem_solve_fung(b, kTissue)), b);
}

TEST(Fem, NewtonConvergesQuadratically) {
  const FemResult r = fem_solve_fung_detailed(loading_from(11, 5.5, stretch_with_bulge), kTissue);
  ASSERT_EQ(r.steps.size(), 10u);
  EXPECT_DOUBLE_EQ(r.steps.back().load_factor, 1.0);
  const double tol = FemConfig{}.tolerance * r.reference_force;
  for (const FemStep& s : r.steps) {
    const auto& res = s.residuals;
    ASSERT_GE(res.size(), 1u);
    EXPECT_LE(res.size() - 1, 10u) << "Newton updates at load factor " << s.load_factor;
    EXPECT_LT(res.back(), tol);
    if (res.size() < 3) continue;
    // observed order over the last three residuals
    const std::size_t k = res.size() - 1;
    const double order = std::log(res[k] / res[k - 1]) / std::log(res[k - 1] / res[k - 2]);
    EXPECT_GE(order, 1.5) << "load factor " << s.load_factor;
  }
}

TEST(Fem, MeshRefinementConverges) {
  const GridField coarse = fem_solve_fung(loading_from(11, 5.5, stretch_with_bulge), kTissue);
  const GridField mid = fem_solve_fung(loading_from(21, 5.5, stretch_with_bulge), kTissue);
  const GridField fine = fem_solve_fung(loading_from(41, 5.5, stretch_with_bulge), kTissue);
  double d_coarse = 0, d_mid = 0, norm = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j)
      for (int c = 0; c < 2; ++c) {
        const double f = fine(4 * i, 4 * j, c);
        d_coarse += std::pow(coarse(i, j, c) - f, 2);
        d_mid += std::pow(mid(2 * i, 2 * j, c) - f, 2);
        norm += f * f;
      }
  EXPECT_LT(std::sqrt(d_coarse / norm), 0.01);
  EXPECT_LT(d_mid, d_coarse);
}

TEST(Fem, RejectsInadmissibleInput) {
  const BoundaryLoading b(5, 5, {5.5, 5.5});
  EXPECT_THROW(fem_solve_fung(b, {1.0, 1.0, 1.0, 2.0}), ConfigError);
  FemConfig bad;
  bad.load_steps = 0;
  EXPECT_THROW(fem_solve_fung(b, kTissue, bad), ConfigError);
}
