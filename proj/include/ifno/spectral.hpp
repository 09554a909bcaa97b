#pragma once

// 2D discrete Fourier transforms and the truncated spectral convolution.
//
// Conventions:
//   * Forward transform is the unnormalized sum
//       H(m1, m2) = sum_{i,j} h(i, j) exp(-2 pi I (m1 i / nx + m2 j / ny)),
//     the inverse carries the 1 / (nx ny) factor.
//   * Spectra use the same node-major, channel-fastest layout as GridField.
//   * Truncated coefficients use the real-input (half-spectrum) layout: along
//     x the k1 lowest |frequency| rows are kept from both corners
//     (0, 1, ..., ceil(k1/2)-1 and -floor(k1/2), ..., -1); along y the
//     columns 0 .. k2-1 of the half spectrum are kept, so k2 <= ny/2 + 1.
//   * Reconstruction from a half spectrum completes it by conjugate symmetry:
//       h(x) = (1 / N) sum_m w(m2) Re(Z(m) exp(2 pi I m.x / N)),
//     with w = 1 on the self-conjugate columns (m2 = 0 and, for even ny,
//     m2 = ny/2) and w = 2 elsewhere. The result is real by construction.

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "ifno/errors.hpp"
#include "ifno/grid.hpp"

namespace ifno {

using cplx = std::complex<double>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Full complex coefficient table, nx x ny x channels.
struct Spectrum {
  int nx = 0;
  int ny = 0;
  int channels = 0;
  std::vector<cplx> values;

  cplx& operator()(int m1, int m2, int ch) {
    return values[node_index(m1, m2, ny) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(ch)];
  }
  cplx operator()(int m1, int m2, int ch) const {
    return values[node_index(m1, m2, ny) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(ch)];
  }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Transforms every channel of a complex nx x ny x c array in place.
inline void fftw_2d(std::vector<cplx>& data, int nx, int ny, int channels, int sign) {
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  std::vector<cplx> buf(n);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(nx, ny, reinterpret_cast<fftw_complex*>(buf.data()),
                            reinterpret_cast<fftw_complex*>(buf.data()), sign, FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw NumericalError("FFTW failed to create a plan");
  for (int ch = 0; ch < channels; ++ch) {
    for (std::size_t k = 0; k < n; ++k) buf[k] = data[k * channels + ch];
    fftw_execute(plan);
    for (std::size_t k = 0; k < n; ++k) data[k * channels + ch] = buf[k];
  }
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace detail

inline Spectrum dft2(const GridField& field) {
  Spectrum s{field.nx(), field.ny(), field.channels(), {}};
  s.values.assign(field.values().begin(), field.values().end());
  detail::fftw_2d(s.values, s.nx, s.ny, s.channels, FFTW_FORWARD);
  return s;
}

/// Inverse transform without discarding the imaginary part.
inline Spectrum idft2_complex(const Spectrum& coeffs) {
  Spectrum out = coeffs;
  detail::fftw_2d(out.values, out.nx, out.ny, out.channels, FFTW_BACKWARD);
  const double scale = 1.0 / (static_cast<double>(coeffs.nx) * coeffs.ny);
  for (auto& v : out.values) v *= scale;
  return out;
}

/// Inverse transform of a full spectrum; returns the real part.
inline GridField idft2(const Spectrum& coeffs, Extent extent = {}) {
  const Spectrum c = idft2_complex(coeffs);
  std::vector<double> v(c.values.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = c.values[k].real();
  return GridField(coeffs.nx, coeffs.ny, coeffs.channels, extent, std::move(v));
}

/// The retained low-frequency modes of an nx x ny grid.
class ModeSet {
 public:
  ModeSet() = default;
  ModeSet(int nx, int ny, int k1, int k2) : nx_(nx), ny_(ny), k1_(k1), k2_(k2) {
    if (nx < 2 || ny < 2) throw ConfigError("ModeSet: grid must be at least 2x2");
    if (k1 < 1 || k1 > nx)
      throw ConfigError("ModeSet: k1 must lie in [1, nx], got " + std::to_string(k1));
    if (k2 < 1 || k2 > ny / 2 + 1)
      throw ConfigError("ModeSet: k2 must lie in [1, ny/2 + 1] under the half-spectrum layout, got " +
                        std::to_string(k2));
  }

  /// Largest legal (k1, k2) for a grid: every mode retained.
  static ModeSet full(int nx, int ny) { return ModeSet(nx, ny, nx, ny / 2 + 1); }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int k1() const { return k1_; }
  int k2() const { return k2_; }
  int size() const { return k1_ * k2_; }

  /// Signed x-frequency of retained row a.
  int freq_x(int a) const {
    const int positive = (k1_ + 1) / 2;
    return a < positive ? a : a - k1_;
  }
  /// Row of the full spectrum holding retained row a.
  int row_x(int a) const {
    const int f = freq_x(a);
    return f >= 0 ? f : f + nx_;
  }
  int freq_y(int b) const { return b; }

  /// Conjugate-symmetry multiplicity of half-spectrum column b.
  double weight_y(int b) const {
    if (b == 0) return 1.0;
    if (ny_ % 2 == 0 && b == ny_ / 2) return 1.0;
    return 2.0;
  }

  friend bool operator==(const ModeSet&, const ModeSet&) = default;

 private:
  int nx_ = 0;
  int ny_ = 0;
  int k1_ = 0;
  int k2_ = 0;
};

/// Retained half-spectrum coefficients, k1 x k2 x channels, mode index a * k2 + b.
struct SpectralCoeffs {
  ModeSet modes;
  int channels = 0;
  std::vector<cplx> values;

  cplx operator()(int a, int b, int ch) const {
    return values[(static_cast<std::size_t>(a) * modes.k2() + b) * channels + ch];
  }
};

inline SpectralCoeffs truncate(const Spectrum& full, int k1, int k2) {
  SpectralCoeffs t{ModeSet(full.nx, full.ny, k1, k2), full.channels, {}};
  t.values.resize(static_cast<std::size_t>(k1) * k2 * full.channels);
  for (int a = 0; a < k1; ++a)
    for (int b = 0; b < k2; ++b)
      for (int ch = 0; ch < full.channels; ++ch)
        t.values[(static_cast<std::size_t>(a) * k2 + b) * full.channels + ch] =
            full(t.modes.row_x(a), b, ch);
  return t;
}

/// Conjugate-symmetric completion of a half spectrum into a full spectrum;
/// modes that are not retained are zero.
inline Spectrum hermitian_complete(const SpectralCoeffs& t) {
  const ModeSet& ms = t.modes;
  Spectrum full{ms.nx(), ms.ny(), t.channels, {}};
  full.values.assign(static_cast<std::size_t>(ms.nx()) * ms.ny() * t.channels, cplx(0.0, 0.0));
  for (int a = 0; a < ms.k1(); ++a)
    for (int b = 0; b < ms.k2(); ++b) {
      const int r = ms.row_x(a);
      const int rc = (ms.nx() - r) % ms.nx();
      const int cc = (ms.ny() - b) % ms.ny();
      const double half = 0.5 * ms.weight_y(b);
      for (int ch = 0; ch < t.channels; ++ch) {
        const cplx z = t(a, b, ch);
        full(r, b, ch) += half * z;
        full(rc, cc, ch) += half * std::conj(z);
      }
    }
  return full;
}

/// Real reconstruction from truncated half-spectrum coefficients.
inline GridField idft2(const SpectralCoeffs& t, Extent extent = {}) {
  return idft2(hermitian_complete(t), extent);
}

/// Complex mode-mixing weights R(m), one d x d matrix per retained mode,
/// stored at ((a * k2 + b) * d + out) * d + in.
struct SpectralWeights {
  ModeSet modes;
  int dim = 0;
  std::vector<cplx> values;

  SpectralWeights() = default;
  SpectralWeights(ModeSet m, int d)
      : modes(m), dim(d), values(static_cast<std::size_t>(m.size()) * d * d, cplx(0.0, 0.0)) {}

  cplx& operator()(int mode, int out, int in) {
    return values[(static_cast<std::size_t>(mode) * dim + out) * dim + in];
  }
  cplx operator()(int mode, int out, int in) const {
    return values[(static_cast<std::size_t>(mode) * dim + out) * dim + in];
  }

  friend bool operator==(const SpectralWeights&, const SpectralWeights&) = default;
};

/// Coefficients of a d-channel field on the retained modes, (k1 k2) x d.
struct ModeMatrix {
  RowMatrix re;
  RowMatrix im;
};

/// Precomputed partial-DFT tables for one ModeSet. Only the retained modes
/// are ever formed, so each transform costs O(N (k1 + k2) d).
class SpectralBasis {
 public:
  SpectralBasis() = default;
  explicit SpectralBasis(const ModeSet& ms) : ms_(ms) {
    const int nx = ms.nx(), ny = ms.ny(), k1 = ms.k1(), k2 = ms.k2();
    const double two_pi = 2.0 * std::numbers::pi;
    cos_x_.resize(k1, nx);
    sin_x_.resize(k1, nx);
    for (int a = 0; a < k1; ++a)
      for (int i = 0; i < nx; ++i) {
        const double t = two_pi * static_cast<double>((static_cast<long>(ms.freq_x(a)) * i) % nx) / nx;
        cos_x_(a, i) = std::cos(t);
        sin_x_(a, i) = std::sin(t);
      }
    cos_y_.resize(k2, ny);
    sin_y_.resize(k2, ny);
    for (int b = 0; b < k2; ++b)
      for (int j = 0; j < ny; ++j) {
        const double t = two_pi * static_cast<double>((static_cast<long>(b) * j) % ny) / ny;
        cos_y_(b, j) = std::cos(t);
        sin_y_(b, j) = std::sin(t);
      }
    weights_.resize(k2);
    for (int b = 0; b < k2; ++b) weights_[b] = ms.weight_y(b);
  }

  const ModeSet& modes() const { return ms_; }
  double inverse_weight(int b) const { return weights_[b] / (static_cast<double>(ms_.nx()) * ms_.ny()); }

  /// H(m) = sum_x h(x) exp(-2 pi I m.x / N) on the retained modes.
  /// `h` is N x d with node-major rows.
  ModeMatrix analyze(const RowMatrix& h) const {
    const int nx = ms_.nx(), ny = ms_.ny(), k1 = ms_.k1(), k2 = ms_.k2();
    const Eigen::Index d = h.cols();
    RowMatrix a_re(nx, k2 * d), a_im(nx, k2 * d);
    for (int i = 0; i < nx; ++i) {
      const auto block = h.middleRows(static_cast<Eigen::Index>(i) * ny, ny);
      Eigen::Map<RowMatrix>(a_re.row(i).data(), k2, d).noalias() = cos_y_ * block;
      Eigen::Map<RowMatrix>(a_im.row(i).data(), k2, d).noalias() = -sin_y_ * block;
    }
    // (C - I S)(Ar + I Ai) = (C Ar + S Ai) + I (C Ai - S Ar)
    RowMatrix h_re(k1, k2 * d), h_im(k1, k2 * d);
    h_re.noalias() = cos_x_ * a_re;
    h_re.noalias() += sin_x_ * a_im;
    h_im.noalias() = cos_x_ * a_im;
    h_im.noalias() -= sin_x_ * a_re;
    ModeMatrix out;
    out.re = Eigen::Map<RowMatrix>(h_re.data(), static_cast<Eigen::Index>(k1) * k2, d);
    out.im = Eigen::Map<RowMatrix>(h_im.data(), static_cast<Eigen::Index>(k1) * k2, d);
    return out;
  }

  /// y(x) = sum_m s(m2) Re(Z(m) exp(2 pi I m.x / N)) with per-column scale s.
  RowMatrix synthesize(const ModeMatrix& z, const std::vector<double>& column_scale) const {
    const int nx = ms_.nx(), ny = ms_.ny(), k1 = ms_.k1(), k2 = ms_.k2();
    const Eigen::Index d = z.re.cols();
    const Eigen::Map<const RowMatrix> z_re(z.re.data(), k1, k2 * d);
    const Eigen::Map<const RowMatrix> z_im(z.im.data(), k1, k2 * d);
    // B = (C^T + I S^T)(Zr + I Zi)
    RowMatrix b_re(nx, k2 * d), b_im(nx, k2 * d);
    b_re.noalias() = cos_x_.transpose() * z_re;
    b_re.noalias() -= sin_x_.transpose() * z_im;
    b_im.noalias() = cos_x_.transpose() * z_im;
    b_im.noalias() += sin_x_.transpose() * z_re;
    RowMatrix cy = cos_y_.transpose();
    RowMatrix sy = sin_y_.transpose();
    for (int b = 0; b < k2; ++b) {
      cy.col(b) *= column_scale[b];
      sy.col(b) *= column_scale[b];
    }
    RowMatrix y(static_cast<Eigen::Index>(nx) * ny, d);
    for (int i = 0; i < nx; ++i) {
      auto block = y.middleRows(static_cast<Eigen::Index>(i) * ny, ny);
      block.noalias() = cy * Eigen::Map<const RowMatrix>(b_re.row(i).data(), k2, d);
      block.noalias() -= sy * Eigen::Map<const RowMatrix>(b_im.row(i).data(), k2, d);
    }
    return y;
  }

  std::vector<double> inverse_scales() const {
    std::vector<double> s(ms_.k2());
    for (int b = 0; b < ms_.k2(); ++b) s[b] = inverse_weight(b);
    return s;
  }
  std::vector<double> unit_scales() const { return std::vector<double>(ms_.k2(), 1.0); }

 private:
  ModeSet ms_;
  RowMatrix cos_x_, sin_x_, cos_y_, sin_y_;
  std::vector<double> weights_;
};

/// Z(m) = R(m) H(m) for every retained mode.
inline ModeMatrix mix_modes(const SpectralWeights& r, const ModeMatrix& h) {
  const int d = r.dim;
  const int m_count = r.modes.size();
  ModeMatrix z{RowMatrix::Zero(m_count, d), RowMatrix::Zero(m_count, d)};
  for (int m = 0; m < m_count; ++m)
    for (int o = 0; o < d; ++o) {
      double sr = 0.0, si = 0.0;
      const cplx* row = &r.values[(static_cast<std::size_t>(m) * d + o) * d];
      for (int in = 0; in < d; ++in) {
        const double rr = row[in].real(), ri = row[in].imag();
        const double hr = h.re(m, in), hi = h.im(m, in);
        sr += rr * hr - ri * hi;
        si += rr * hi + ri * hr;
      }
      z.re(m, o) = sr;
      z.im(m, o) = si;
    }
  return z;
}

/// Matrix-level spectral convolution, N x d in and out.
inline RowMatrix spectral_conv(const SpectralBasis& basis, const SpectralWeights& r, const RowMatrix& h) {
  return basis.synthesize(mix_modes(r, basis.analyze(h)), basis.inverse_scales());
}

/// Truncate the spectrum of h to the k1 x k2 retained modes, mix channels with
/// R per mode, zero-fill and transform back.
inline GridField spectral_conv(const GridField& h, const SpectralWeights& r) {
  if (h.channels() != r.dim)
    throw ConfigError("spectral_conv: field has " + std::to_string(h.channels()) +
                      " channels, weights expect " + std::to_string(r.dim));
  if (h.nx() != r.modes.nx() || h.ny() != r.modes.ny())
    throw ConfigError("spectral_conv: weights were built for a different grid");
  const SpectralBasis basis(r.modes);
  const Eigen::Map<const RowMatrix> hm(h.values().data(), static_cast<Eigen::Index>(h.nodes()), h.channels());
  const RowMatrix y = spectral_conv(basis, r, RowMatrix(hm));
  return GridField(h.nx(), h.ny(), h.channels(), h.extent(),
                   std::vector<double>(y.data(), y.data() + y.size()));
}

}  // namespace ifno
