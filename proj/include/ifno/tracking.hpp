#pragma once

// Tracked-node exports (DIC grids), displacement construction and
// resampling onto the model grid.
//
// CSV layout:
//   # scale_mm_per_px=<s> frame_rate_hz=<f> protocol=<id> grid=<rows>x<cols>
//   frame_id,node_id,x,y
//   ...
// The metadata line is optional (defaults: scale 1, i.e. coordinates already
// in mm; 5 Hz; protocol 1; square grid inferred). Node ids are 0..N-1 in
// row-major order over the tracking grid (row index along y), and frame ids
// must increase. Frame 0 of the file is the reference configuration.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/grid.hpp"
#include "ifno/spline.hpp"

namespace ifno {

using Point2 = std::array<double, 2>;

struct TrackedFrames {
  int protocol_id = 1;
  double frame_rate_hz = 5.0;
  double mm_per_pixel = 1.0;
  int rows = 0;  // tracking-grid nodes along y
  int cols = 0;  // tracking-grid nodes along x
  std::vector<int> frame_ids;
  std::vector<std::vector<Point2>> coords;  // [frame][node], mm

  std::size_t frame_count() const { return coords.size(); }
  std::size_t node_count() const { return coords.empty() ? 0 : coords.front().size(); }
};

/// Displacements of one frame at the reference node positions.
struct ScatteredSample {
  std::vector<Point2> points;        // reference positions, mm
  std::vector<Point2> displacement;  // mm
  int rows = 0;
  int cols = 0;
  int protocol_id = 1;
  int frame_index = 0;
  Provenance provenance = Provenance::original;
};

namespace detail {

inline void parse_metadata(const std::string& line, TrackedFrames& f) {
  std::istringstream ss(line.substr(1));
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    try {
      if (key == "scale_mm_per_px") f.mm_per_pixel = std::stod(val);
      else if (key == "frame_rate_hz") f.frame_rate_hz = std::stod(val);
      else if (key == "protocol") f.protocol_id = std::stoi(val);
      else if (key == "grid") {
        const auto x = val.find('x');
        if (x == std::string::npos) throw DataError("bad grid spec '" + val + "'");
        f.rows = std::stoi(val.substr(0, x));
        f.cols = std::stoi(val.substr(x + 1));
      }
    } catch (const std::logic_error&) {
      throw DataError("tracked csv: bad metadata value for '" + key + "'");
    }
  }
  if (!(f.mm_per_pixel > 0.0)) throw DataError("tracked csv: scale_mm_per_px must be positive");
}

}  // namespace detail

inline TrackedFrames parse_tracked_csv(std::istream& in, const std::string& name = "<stream>") {
  TrackedFrames f;
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": empty file");
  if (!line.empty() && line[0] == '#') {
    detail::parse_metadata(line, f);
    if (!std::getline(in, line)) throw DataError(name + ": missing header");
  }
  if (line.rfind("frame_id,node_id,x,y", 0) != 0) throw DataError(name + ": expected header frame_id,node_id,x,y");

  std::map<int, std::map<int, Point2>> frames;
  int last_frame = -1;
  bool any = false;
  int row = 2;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int fid = 0, nid = 0;
    double x = 0, y = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> fid >> c1 >> nid >> c2 >> x >> c3 >> y) || c1 != ',' || c2 != ',' || c3 != ',')
      throw DataError(name + ": malformed row " + std::to_string(row));
    if (any && fid < last_frame)
      throw DataError(name + ": frame ids not monotone at row " + std::to_string(row));
    if (!std::isfinite(x) || !std::isfinite(y)) throw DataError(name + ": non-finite coordinate at row " + std::to_string(row));
    if (!frames[fid].emplace(nid, Point2{x * f.mm_per_pixel, y * f.mm_per_pixel}).second)
      throw DataError(name + ": duplicate node " + std::to_string(nid) + " in frame " + std::to_string(fid));
    last_frame = fid;
    any = true;
  }
  if (frames.empty()) throw DataError(name + ": no data rows");
  const std::size_t nodes = frames.begin()->second.size();
  for (const auto& [fid, m] : frames) {
    for (std::size_t k = 0; k < nodes; ++k)
      if (!m.contains(static_cast<int>(k)))
        throw DataError(name + ": frame " + std::to_string(fid) + " is missing node " + std::to_string(k));
    if (m.size() != nodes)
      throw DataError(name + ": frame " + std::to_string(fid) + " has " + std::to_string(m.size()) +
                      " nodes, expected " + std::to_string(nodes));
    f.frame_ids.push_back(fid);
    std::vector<Point2> c;
    c.reserve(nodes);
    for (const auto& [nid, p] : m) c.push_back(p);
    f.coords.push_back(std::move(c));
  }
  if (f.rows == 0 && f.cols == 0) {
    const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nodes))));
    if (static_cast<std::size_t>(side * side) == nodes) f.rows = f.cols = side;
  }
  if (f.rows > 0 && static_cast<std::size_t>(f.rows) * static_cast<std::size_t>(f.cols) != nodes)
    throw DataError(name + ": grid " + std::to_string(f.rows) + "x" + std::to_string(f.cols) + " does not match " +
                    std::to_string(nodes) + " nodes");
  return f;
}

inline TrackedFrames ingest_tracked_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path);
  return parse_tracked_csv(in, path);
}

inline void write_tracked_csv(const std::string& path, const TrackedFrames& f) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path);
  out.precision(17);
  out << "# scale_mm_per_px=" << f.mm_per_pixel << " frame_rate_hz=" << f.frame_rate_hz
      << " protocol=" << f.protocol_id << " grid=" << f.rows << 'x' << f.cols << '\n';
  out << "frame_id,node_id,x,y\n";
  for (std::size_t k = 0; k < f.frame_count(); ++k)
    for (std::size_t n = 0; n < f.node_count(); ++n)
      out << f.frame_ids[k] << ',' << n << ',' << f.coords[k][n][0] / f.mm_per_pixel << ','
          << f.coords[k][n][1] / f.mm_per_pixel << '\n';
  if (!out) throw std::ios_base::failure("write failed: " + path);
}

/// u = x(frame) - x(reference frame) at every tracked node.
inline std::vector<ScatteredSample> frames_to_samples(const TrackedFrames& f) {
  std::vector<ScatteredSample> out;
  if (f.coords.empty()) return out;
  const auto& ref = f.coords.front();
  for (std::size_t k = 0; k < f.frame_count(); ++k) {
    ScatteredSample s;
    s.points = ref;
    s.displacement.resize(ref.size());
    for (std::size_t n = 0; n < ref.size(); ++n)
      s.displacement[n] = {f.coords[k][n][0] - ref[n][0], f.coords[k][n][1] - ref[n][1]};
    s.rows = f.rows;
    s.cols = f.cols;
    s.protocol_id = f.protocol_id;
    s.frame_index = f.frame_ids[k];
    out.push_back(std::move(s));
  }
  return out;
}

/// Separable cubic-spline interpolation of a structured scattered sample onto
/// an nx x ny grid spanning the tracked region. Axis knots are the mean
/// reference x of each tracking column and mean y of each tracking row.
inline Sample spline_resample(const ScatteredSample& s, int nx = 21, int ny = 21) {
  if (s.rows < 4 || s.cols < 4)
    throw DataError("spline_resample: tracking grid " + std::to_string(s.rows) + "x" + std::to_string(s.cols) +
                    " too small for cubic splines (need >= 4 per axis)");
  if (s.points.size() != static_cast<std::size_t>(s.rows) * static_cast<std::size_t>(s.cols))
    throw DataError("spline_resample: point count does not match the tracking grid");
  std::vector<double> kx(static_cast<std::size_t>(s.cols), 0.0), ky(static_cast<std::size_t>(s.rows), 0.0);
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c) {
      const auto& p = s.points[static_cast<std::size_t>(r * s.cols + c)];
      kx[static_cast<std::size_t>(c)] += p[0] / s.rows;
      ky[static_cast<std::size_t>(r)] += p[1] / s.cols;
    }
  const Extent extent{kx.back() - kx.front(), ky.back() - ky.front()};
  if (!(extent.x > 0.0 && extent.y > 0.0)) throw DataError("spline_resample: degenerate tracking grid");
  std::vector<double> qx(static_cast<std::size_t>(nx)), qy(static_cast<std::size_t>(ny));
  for (int i = 0; i < nx; ++i) qx[static_cast<std::size_t>(i)] = kx.front() + i * extent.x / (nx - 1);
  for (int j = 0; j < ny; ++j) qy[static_cast<std::size_t>(j)] = ky.front() + j * extent.y / (ny - 1);
  qx.back() = kx.back();
  qy.back() = ky.back();

  std::vector<double> v(static_cast<std::size_t>(nx) * ny * 2);
  for (int ch = 0; ch < 2; ++ch) {
    Eigen::MatrixXd vals(s.cols, s.rows);  // x index slowest
    for (int r = 0; r < s.rows; ++r)
      for (int c = 0; c < s.cols; ++c) vals(c, r) = s.displacement[static_cast<std::size_t>(r * s.cols + c)][static_cast<std::size_t>(ch)];
    const Eigen::MatrixXd g = spline_resample_2d(kx, ky, vals, qx, qy);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j) v[node_index(i, j, ny) * 2 + static_cast<std::size_t>(ch)] = g(i, j);
  }
  Sample out;
  out.field = GridField(nx, ny, 2, extent, std::move(v));
  out.boundary = extract_boundary(out.field);
  out.protocol_id = s.protocol_id;
  out.frame_index = s.frame_index;
  out.provenance = s.provenance;
  return out;
}

}  // namespace ifno
