#pragma once

// The implicit Fourier neural operator: a lifting layer, L residual layers
// that all share one set of weights, and a two-layer projection. Two
// independent sub-networks predict ux and uy.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/grid.hpp"
#include "ifno/rng.hpp"
#include "ifno/spectral.hpp"

namespace ifno {

enum class Activation { relu, softplus };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  throw ConfigError("unknown activation '" + s + "' (expected relu or softplus)");
}

/// Sharpness of the smooth activation used for derivative verification.
inline constexpr double kSoftplusSharpness = 100.0;

inline double activate(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  const double t = kSoftplusSharpness * x;
  return (t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t))) / kSoftplusSharpness;
}

inline double activate_derivative(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
  const double t = kSoftplusSharpness * x;
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

inline RowMatrix activate(Activation a, const RowMatrix& x) {
  return x.unaryExpr([a](double v) { return activate(a, v); });
}

inline RowMatrix activate_derivative(Activation a, const RowMatrix& x) {
  return x.unaryExpr([a](double v) { return activate_derivative(a, v); });
}

struct ModelConfig {
  int nx = 21;
  int ny = 21;
  Extent extent{5.5, 5.5};
  int width = 16;       // feature dimension d
  int proj_width = 64;  // hidden width of the projection
  int modes_x = 8;      // k1
  int modes_y = 8;      // k2
  int depth = 12;       // L
  double horizon = 1.0; // T; depth only changes the step dt = T / L
  Activation activation = Activation::relu;

  void validate() const {
    require(nx >= 2 && ny >= 2, "model: grid must be at least 2x2");
    require(extent.x > 0.0 && extent.y > 0.0, "model: extent must be positive");
    require(width >= 1, "model: width must be >= 1");
    require(proj_width >= 1, "model: proj_width must be >= 1");
    require(depth >= 1, "model: depth must be >= 1");
    require(horizon > 0.0, "model: horizon must be positive");
    ModeSet(nx, ny, modes_x, modes_y);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Trainable parameters of one sub-network. The layer weights (pointwise,
/// spectral, bias) exist once and are reused by every layer.
struct SubNetParams {
  RowMatrix lift_weight;      // d x 4
  Eigen::VectorXd lift_bias;  // d
  RowMatrix pointwise_weight; // d x d
  SpectralWeights spectral_weight;
  Eigen::VectorXd layer_bias;  // d
  RowMatrix proj1_weight;      // dq x d
  Eigen::VectorXd proj1_bias;  // dq
  RowMatrix proj2_weight;      // 1 x dq
  Eigen::VectorXd proj2_bias;  // 1

  static SubNetParams zeros(const ModelConfig& c) {
    SubNetParams p;
    p.lift_weight = RowMatrix::Zero(c.width, 4);
    p.lift_bias = Eigen::VectorXd::Zero(c.width);
    p.pointwise_weight = RowMatrix::Zero(c.width, c.width);
    p.spectral_weight = SpectralWeights(ModeSet(c.nx, c.ny, c.modes_x, c.modes_y), c.width);
    p.layer_bias = Eigen::VectorXd::Zero(c.width);
    p.proj1_weight = RowMatrix::Zero(c.proj_width, c.width);
    p.proj1_bias = Eigen::VectorXd::Zero(c.proj_width);
    p.proj2_weight = RowMatrix::Zero(1, c.proj_width);
    p.proj2_bias = Eigen::VectorXd::Zero(1);
    return p;
  }

  friend bool operator==(const SubNetParams& a, const SubNetParams& b) {
    return a.lift_weight == b.lift_weight && a.lift_bias == b.lift_bias &&
           a.pointwise_weight == b.pointwise_weight && a.spectral_weight == b.spectral_weight &&
           a.layer_bias == b.layer_bias && a.proj1_weight == b.proj1_weight &&
           a.proj1_bias == b.proj1_bias && a.proj2_weight == b.proj2_weight &&
           a.proj2_bias == b.proj2_bias;
  }
};

inline constexpr int kBlocksPerSubNet = 9;

/// Visits every parameter block as (name, mutable span of doubles) in the
/// fixed declaration order. Complex spectral weights are exposed as
/// interleaved (re, im) pairs.
template <class F>
void for_each_block(SubNetParams& p, F&& f) {
  auto span_of = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  f(std::string_view("lift_weight"), span_of(p.lift_weight));
  f(std::string_view("lift_bias"), span_of(p.lift_bias));
  f(std::string_view("pointwise_weight"), span_of(p.pointwise_weight));
  f(std::string_view("spectral_weight"),
    std::span<double>(reinterpret_cast<double*>(p.spectral_weight.values.data()),
                      p.spectral_weight.values.size() * 2));
  f(std::string_view("layer_bias"), span_of(p.layer_bias));
  f(std::string_view("proj1_weight"), span_of(p.proj1_weight));
  f(std::string_view("proj1_bias"), span_of(p.proj1_bias));
  f(std::string_view("proj2_weight"), span_of(p.proj2_weight));
  f(std::string_view("proj2_bias"), span_of(p.proj2_bias));
}

template <class F>
void for_each_block(const SubNetParams& p, F&& f) {
  for_each_block(const_cast<SubNetParams&>(p), [&](std::string_view name, std::span<double> s) {
    f(name, std::span<const double>(s.data(), s.size()));
  });
}

/// All parameters of the two-sub-network operator plus its depth.
struct IfnoParams {
  ModelConfig config;
  SubNetParams sub_x;
  SubNetParams sub_y;
  std::uint64_t seed = 0;

  int depth() const { return config.depth; }
  double dt() const { return config.horizon / config.depth; }

  static IfnoParams zeros(const ModelConfig& c) {
    c.validate();
    return IfnoParams{c, SubNetParams::zeros(c), SubNetParams::zeros(c), 0};
  }

  friend bool operator==(const IfnoParams&, const IfnoParams&) = default;
};

/// Gradients share the parameter layout.
using Gradient = IfnoParams;

/// Visits both sub-networks' blocks with names prefixed "x." and "y.".
template <class P, class F>
void for_each_block(P& params, F&& f) requires std::is_same_v<std::remove_const_t<P>, IfnoParams> {
  for_each_block(params.sub_x, [&](std::string_view n, auto s) { f("x." + std::string(n), s); });
  for_each_block(params.sub_y, [&](std::string_view n, auto s) { f("y." + std::string(n), s); });
}

inline std::size_t parameter_count(const IfnoParams& p) {
  std::size_t n = 0;
  for_each_block(p, [&](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

inline std::vector<double> flatten(const IfnoParams& p) {
  std::vector<double> out;
  out.reserve(parameter_count(p));
  for_each_block(p, [&](const std::string&, std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

inline void unflatten(std::span<const double> flat, IfnoParams& p) {
  if (flat.size() != parameter_count(p)) throw ConfigError("unflatten: size mismatch");
  std::size_t k = 0;
  for_each_block(p, [&](const std::string&, std::span<double> s) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.begin() + static_cast<std::ptrdiff_t>(k + s.size()), s.begin());
    k += s.size();
  });
}

/// Uniform initialization in [-a, a]: a = 1 / fan_in for real matrices and
/// their biases, a = 1 / sqrt(d k1 k2) for the spectral weights.
inline IfnoParams init_params(const ModelConfig& config, std::uint64_t seed) {
  IfnoParams p = IfnoParams::zeros(config);
  p.seed = seed;
  Rng rng(seed);
  const double d = config.width;
  const double spectral_bound = 1.0 / std::sqrt(d * config.modes_x * config.modes_y);
  auto fill = [&](std::span<double> s, double bound) {
    for (double& v : s) v = rng.uniform(-bound, bound);
  };
  for (SubNetParams* sub : {&p.sub_x, &p.sub_y}) {
    for_each_block(*sub, [&](std::string_view name, std::span<double> s) {
      double bound = 1.0;
      if (name == "lift_weight" || name == "lift_bias") bound = 1.0 / 4.0;
      else if (name == "pointwise_weight" || name == "layer_bias") bound = 1.0 / d;
      else if (name == "spectral_weight") bound = spectral_bound;
      else if (name == "proj1_weight" || name == "proj1_bias") bound = 1.0 / d;
      else if (name == "proj2_weight" || name == "proj2_bias") bound = 1.0 / config.proj_width;
      fill(s, bound);
    });
  }
  return p;
}

/// Continue training at a larger depth: parameters are copied verbatim,
/// only the step dt = T / L changes.
inline IfnoParams shallow_to_deep(const IfnoParams& params, int new_depth) {
  if (new_depth <= params.depth())
    throw ConfigError("shallow_to_deep: new depth " + std::to_string(new_depth) +
                      " must exceed current depth " + std::to_string(params.depth()));
  IfnoParams out = params;
  out.config.depth = new_depth;
  return out;
}

// ---------------------------------------------------------------------------
// Matrix-level building blocks (N x channels, node-major rows).

inline RowMatrix to_matrix(const GridField& f) {
  return Eigen::Map<const RowMatrix>(f.values().data(), static_cast<Eigen::Index>(f.nodes()), f.channels());
}

inline GridField to_field(const RowMatrix& m, int nx, int ny, Extent extent) {
  return GridField(nx, ny, static_cast<int>(m.cols()), extent, std::vector<double>(m.data(), m.data() + m.size()));
}

inline RowMatrix lift(const RowMatrix& features, const RowMatrix& weight, const Eigen::VectorXd& bias) {
  RowMatrix h = features * weight.transpose();
  h.rowwise() += bias.transpose();
  return h;
}

/// Pre-activation W h + K(h) + c of one layer.
inline RowMatrix layer_preactivation(const RowMatrix& h, const SubNetParams& p, const SpectralBasis& basis) {
  RowMatrix s = h * p.pointwise_weight.transpose();
  s += spectral_conv(basis, p.spectral_weight, h);
  s.rowwise() += p.layer_bias.transpose();
  return s;
}

inline RowMatrix layer_step(const RowMatrix& h, const SubNetParams& p, double dt, Activation act,
                            const SpectralBasis& basis) {
  return h + dt * activate(act, layer_preactivation(h, p, basis));
}

inline RowMatrix project(const RowMatrix& h, const RowMatrix& w1, const Eigen::VectorXd& b1,
                         const RowMatrix& w2, const Eigen::VectorXd& b2, Activation act) {
  RowMatrix a = h * w1.transpose();
  a.rowwise() += b1.transpose();
  RowMatrix u = activate(act, a) * w2.transpose();
  u.rowwise() += b2.transpose();
  return u;
}

// ---------------------------------------------------------------------------
// GridField-level operations.

inline GridField lift(const GridField& features, const RowMatrix& weight, const Eigen::VectorXd& bias) {
  if (features.channels() != 4 || weight.cols() != 4 || weight.rows() != bias.size())
    throw ConfigError("lift: expected 4 input channels and a d x 4 weight with d biases");
  return to_field(lift(to_matrix(features), weight, bias), features.nx(), features.ny(), features.extent());
}

inline GridField layer_step(const GridField& h, const SubNetParams& p, double dt, Activation act) {
  if (h.channels() != p.pointwise_weight.rows() || h.channels() != p.spectral_weight.dim)
    throw ConfigError("layer_step: field channels do not match layer width");
  if (h.nx() != p.spectral_weight.modes.nx() || h.ny() != p.spectral_weight.modes.ny())
    throw ConfigError("layer_step: grid does not match spectral weights");
  const SpectralBasis basis(p.spectral_weight.modes);
  return to_field(layer_step(to_matrix(h), p, dt, act, basis), h.nx(), h.ny(), h.extent());
}

inline GridField project(const GridField& h, const RowMatrix& w1, const Eigen::VectorXd& b1,
                         const RowMatrix& w2, const Eigen::VectorXd& b2, Activation act = Activation::relu) {
  if (h.channels() != w1.cols() || w1.rows() != b1.size() || w2.cols() != w1.rows() || w2.rows() != 1 ||
      b2.size() != 1)
    throw ConfigError("project: shape mismatch");
  return to_field(project(to_matrix(h), w1, b1, w2, b2, act), h.nx(), h.ny(), h.extent());
}

/// Output of one sub-network (N x 1) from the input features (N x 4).
inline Eigen::VectorXd subnet_forward(const RowMatrix& features, const SubNetParams& p, const ModelConfig& c,
                                      const SpectralBasis& basis) {
  RowMatrix h = lift(features, p.lift_weight, p.lift_bias);
  const double dt = c.horizon / c.depth;
  for (int l = 0; l < c.depth; ++l) h = layer_step(h, p, dt, c.activation, basis);
  return project(h, p.proj1_weight, p.proj1_bias, p.proj2_weight, p.proj2_bias, c.activation).col(0);
}

inline void check_grid(const BoundaryLoading& b, const ModelConfig& c) {
  if (b.nx() != c.nx || b.ny() != c.ny)
    throw ConfigError("forward: loading is on a " + std::to_string(b.nx()) + "x" + std::to_string(b.ny()) +
                      " grid, model expects " + std::to_string(c.nx) + "x" + std::to_string(c.ny));
}

/// Predicted displacement field: channel 0 from the x sub-network, channel 1
/// from the y sub-network.
inline GridField forward(const BoundaryLoading& b, const IfnoParams& theta, const SpectralBasis& basis) {
  check_grid(b, theta.config);
  const RowMatrix f = to_matrix(build_input_features(b, b.nx(), b.ny()));
  const Eigen::VectorXd ux = subnet_forward(f, theta.sub_x, theta.config, basis);
  const Eigen::VectorXd uy = subnet_forward(f, theta.sub_y, theta.config, basis);
  std::vector<double> v(static_cast<std::size_t>(f.rows()) * 2);
  for (Eigen::Index n = 0; n < f.rows(); ++n) {
    v[2 * n] = ux[n];
    v[2 * n + 1] = uy[n];
  }
  return GridField(b.nx(), b.ny(), 2, b.extent(), std::move(v));
}

inline GridField forward(const BoundaryLoading& b, const IfnoParams& theta) {
  return forward(b, theta, SpectralBasis(theta.sub_x.spectral_weight.modes));
}

}  // namespace ifno
