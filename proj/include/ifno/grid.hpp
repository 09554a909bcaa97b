#pragma once

// Structured-grid field types and the layout conventions every other module
// relies on.
//
// Layout conventions (the single source of truth):
//   * Node (i, j) has i in [0, nx) along x and j in [0, ny) along y.
//   * Node coordinate is (i * extent.x / (nx - 1), j * extent.y / (ny - 1)),
//     so node (0, 0) sits at the origin corner.
//   * Field storage is node-major with channels fastest:
//       values[(i * ny + j) * channels + ch].
//   * Boundary nodes are listed counterclockwise starting at the origin
//     corner: bottom edge (j = 0, i ascending), right edge (i = nx - 1,
//     j ascending), top edge (j = ny - 1, i descending), left edge (i = 0,
//     j descending). There are 2 (nx + ny) - 4 of them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/stress_record.hpp"

namespace ifno {

struct Extent {
  double x = 1.0;
  double y = 1.0;

  double area() const { return x * y; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

inline std::size_t node_index(int i, int j, int ny) {
  return static_cast<std::size_t>(i) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(j);
}

inline std::size_t boundary_size(int nx, int ny) {
  return static_cast<std::size_t>(2 * (nx + ny) - 4);
}

/// Boundary node (i, j) pairs in the fixed counterclockwise order.
inline std::vector<std::pair<int, int>> boundary_nodes(int nx, int ny) {
  std::vector<std::pair<int, int>> out;
  out.reserve(boundary_size(nx, ny));
  for (int i = 0; i < nx; ++i) out.emplace_back(i, 0);
  for (int j = 1; j < ny; ++j) out.emplace_back(nx - 1, j);
  for (int i = nx - 2; i >= 0; --i) out.emplace_back(i, ny - 1);
  for (int j = ny - 2; j >= 1; --j) out.emplace_back(0, j);
  return out;
}

inline bool is_boundary_node(int i, int j, int nx, int ny) {
  return i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
}

/// A vector-valued function sampled on an nx x ny node grid.
class GridField {
 public:
  GridField() = default;

  GridField(int nx, int ny, int channels, Extent extent = {})
      : GridField(nx, ny, channels, extent,
                  std::vector<double>(static_cast<std::size_t>(std::max(nx, 0)) *
                                          static_cast<std::size_t>(std::max(ny, 0)) *
                                          static_cast<std::size_t>(std::max(channels, 0)),
                                      0.0)) {}

  GridField(int nx, int ny, int channels, Extent extent, std::vector<double> values)
      : nx_(nx), ny_(ny), channels_(channels), extent_(extent), values_(std::move(values)) {
    if (nx < 2 || ny < 2) throw ConfigError("GridField: need at least 2 nodes per axis");
    if (channels < 1) throw ConfigError("GridField: need at least one channel");
    if (!(extent.x > 0.0) || !(extent.y > 0.0)) throw ConfigError("GridField: extent must be positive");
    if (values_.size() != nodes() * static_cast<std::size_t>(channels))
      throw ConfigError("GridField: value count does not match nx*ny*channels");
    for (double v : values_)
      if (!std::isfinite(v)) throw NumericalError("GridField: non-finite value");
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int channels() const { return channels_; }
  const Extent& extent() const { return extent_; }
  std::size_t nodes() const { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }

  double operator()(int i, int j, int ch) const {
    return values_[node_index(i, j, ny_) * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(ch)];
  }
  std::span<const double> values() const { return values_; }

  double spacing_x() const { return extent_.x / (nx_ - 1); }
  double spacing_y() const { return extent_.y / (ny_ - 1); }
  double coord_x(int i) const { return i * spacing_x(); }
  double coord_y(int j) const { return j * spacing_y(); }

  bool same_shape(const GridField& o) const {
    return nx_ == o.nx_ && ny_ == o.ny_ && channels_ == o.channels_;
  }

  friend bool operator==(const GridField&, const GridField&) = default;

 private:
  int nx_ = 0;
  int ny_ = 0;
  int channels_ = 0;
  Extent extent_{};
  std::vector<double> values_;
};

/// Two-channel node coordinates of an nx x ny grid.
inline GridField coordinate_field(int nx, int ny, Extent extent) {
  std::vector<double> v(static_cast<std::size_t>(nx) * ny * 2);
  const double hx = extent.x / (nx - 1);
  const double hy = extent.y / (ny - 1);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      v[node_index(i, j, ny) * 2] = i * hx;
      v[node_index(i, j, ny) * 2 + 1] = j * hy;
    }
  return GridField(nx, ny, 2, extent, std::move(v));
}

/// Prescribed displacement (ux, uy) on the boundary nodes, in mm.
class BoundaryLoading {
 public:
  BoundaryLoading() = default;

  BoundaryLoading(int nx, int ny, Extent extent = {})
      : BoundaryLoading(nx, ny, extent, std::vector<double>(boundary_size(nx, ny) * 2, 0.0)) {}

  BoundaryLoading(int nx, int ny, Extent extent, std::vector<double> values)
      : nx_(nx), ny_(ny), extent_(extent), values_(std::move(values)) {
    if (nx < 2 || ny < 2) throw ConfigError("BoundaryLoading: need at least 2 nodes per axis");
    if (values_.size() != boundary_size(nx, ny) * 2)
      throw ConfigError("BoundaryLoading: expected 2 values per boundary node (" +
                        std::to_string(boundary_size(nx, ny)) + " nodes)");
    for (double v : values_)
      if (!std::isfinite(v)) throw NumericalError("BoundaryLoading: non-finite value");
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  const Extent& extent() const { return extent_; }
  std::size_t size() const { return values_.size() / 2; }
  double ux(std::size_t k) const { return values_[2 * k]; }
  double uy(std::size_t k) const { return values_[2 * k + 1]; }
  std::span<const double> values() const { return values_; }

  friend bool operator==(const BoundaryLoading&, const BoundaryLoading&) = default;

 private:
  int nx_ = 0;
  int ny_ = 0;
  Extent extent_{};
  std::vector<double> values_;
};

enum class Provenance { original, smoothed, synthetic };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::smoothed: return "smoothed";
    case Provenance::synthetic: return "synthetic";
  }
  return "unknown";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "original") return Provenance::original;
  if (s == "smoothed") return Provenance::smoothed;
  if (s == "synthetic") return Provenance::synthetic;
  throw DataError("unknown provenance '" + s + "'");
}

/// One (boundary loading, displacement field) observation.
struct Sample {
  BoundaryLoading boundary;
  GridField field;  // 2 channels: ux, uy
  int protocol_id = 1;
  int frame_index = 0;
  int cycle = 0;  // loading/unloading cycle within the protocol, 0-based
  Provenance provenance = Provenance::synthetic;
  std::optional<StressStretchRecord> stress;

  friend bool operator==(const Sample&, const Sample&) = default;
};

inline BoundaryLoading extract_boundary(const GridField& field) {
  if (field.channels() != 2)
    throw ConfigError("extract_boundary: field must have 2 channels, got " +
                      std::to_string(field.channels()));
  const auto nodes = boundary_nodes(field.nx(), field.ny());
  std::vector<double> v;
  v.reserve(nodes.size() * 2);
  for (auto [i, j] : nodes) {
    v.push_back(field(i, j, 0));
    v.push_back(field(i, j, 1));
  }
  return BoundaryLoading(field.nx(), field.ny(), field.extent(), std::move(v));
}

/// Boundary values on boundary nodes, exact zeros in the interior.
inline GridField zero_pad_embed(const BoundaryLoading& b, int nx, int ny) {
  if (b.nx() != nx || b.ny() != ny)
    throw ConfigError("zero_pad_embed: loading sized for " + std::to_string(b.nx()) + "x" +
                      std::to_string(b.ny()) + ", grid is " + std::to_string(nx) + "x" +
                      std::to_string(ny));
  std::vector<double> v(static_cast<std::size_t>(nx) * ny * 2, 0.0);
  const auto nodes = boundary_nodes(nx, ny);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto n = node_index(nodes[k].first, nodes[k].second, ny);
    v[2 * n] = b.ux(k);
    v[2 * n + 1] = b.uy(k);
  }
  return GridField(nx, ny, 2, b.extent(), std::move(v));
}

/// Network input f = [x, y, u~_D,x, u~_D,y] per node.
inline GridField build_input_features(const BoundaryLoading& b, int nx, int ny) {
  const GridField padded = zero_pad_embed(b, nx, ny);
  const GridField coords = coordinate_field(nx, ny, b.extent());
  std::vector<double> v(padded.nodes() * 4);
  for (std::size_t n = 0; n < padded.nodes(); ++n) {
    v[4 * n + 0] = coords.values()[2 * n];
    v[4 * n + 1] = coords.values()[2 * n + 1];
    v[4 * n + 2] = padded.values()[2 * n];
    v[4 * n + 3] = padded.values()[2 * n + 1];
  }
  return GridField(nx, ny, 4, b.extent(), std::move(v));
}

/// Trapezoidal quadrature weight of every node, node-major.
inline std::vector<double> trapezoid_weights(int nx, int ny, Extent extent) {
  const double hx = extent.x / (nx - 1);
  const double hy = extent.y / (ny - 1);
  std::vector<double> w(static_cast<std::size_t>(nx) * ny);
  for (int i = 0; i < nx; ++i) {
    const double wi = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
    for (int j = 0; j < ny; ++j) {
      const double wj = (j == 0 || j == ny - 1) ? 0.5 : 1.0;
      w[node_index(i, j, ny)] = wi * wj * hx * hy;
    }
  }
  return w;
}

/// Squared discrete L2(Omega) norm summed over all channels.
inline double squared_l2_norm(const GridField& f) {
  const auto w = trapezoid_weights(f.nx(), f.ny(), f.extent());
  const auto v = f.values();
  const auto c = static_cast<std::size_t>(f.channels());
  double s = 0.0;
  for (std::size_t n = 0; n < f.nodes(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) s += w[n] * v[n * c + ch] * v[n * c + ch];
  return s;
}

inline double squared_l2_distance(const GridField& a, const GridField& b) {
  if (!a.same_shape(b)) throw ConfigError("squared_l2_distance: shape mismatch");
  const auto w = trapezoid_weights(a.nx(), a.ny(), a.extent());
  const auto va = a.values();
  const auto vb = b.values();
  const auto c = static_cast<std::size_t>(a.channels());
  double s = 0.0;
  for (std::size_t n = 0; n < a.nodes(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = va[n * c + ch] - vb[n * c + ch];
      s += w[n] * d * d;
    }
  return s;
}

struct RelativeError {
  double value = 0.0;       // ||pred - truth|| / ||truth|| when defined
  double error_norm = 0.0;  // ||pred - truth||
  double truth_norm = 0.0;  // ||truth||
  bool defined = false;     // false when ||truth|| is below the floor
};

/// Denominator floor below which the relative error is reported as undefined.
inline double relative_error_floor(Extent extent) { return 1e-8 * std::sqrt(extent.area()); }

inline RelativeError relative_l2_error(const GridField& pred, const GridField& truth) {
  if (!pred.same_shape(truth)) throw ConfigError("relative_l2_error: shape mismatch");
  RelativeError r;
  r.error_norm = std::sqrt(squared_l2_distance(pred, truth));
  r.truth_norm = std::sqrt(squared_l2_norm(truth));
  r.defined = r.truth_norm >= relative_error_floor(truth.extent());
  r.value = r.defined ? r.error_norm / r.truth_norm : 0.0;
  return r;
}

}  // namespace ifno
