#pragma once

namespace ifno {

/// Homogenized biaxial stress-stretch measurement at one instant.
/// Stretches are dimensionless, stresses are first Piola-Kirchhoff in kPa.
struct StressStretchRecord {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double p11 = 0.0;
  double p22 = 0.0;

  friend bool operator==(const StressStretchRecord&, const StressStretchRecord&) = default;
};

/// P11 = Fx / (Ly Lz), P22 = Fy / (Lx Lz). Forces in N, lengths in mm give MPa;
/// the factor 1000 converts to kPa.
inline StressStretchRecord record_from_forces(double lambda1, double lambda2, double force_x_n,
                                              double force_y_n, double length_x_mm,
                                              double length_y_mm, double thickness_mm) {
  StressStretchRecord r;
  r.lambda1 = lambda1;
  r.lambda2 = lambda2;
  r.p11 = 1000.0 * force_x_n / (length_y_mm * thickness_mm);
  r.p22 = 1000.0 * force_y_n / (length_x_mm * thickness_mm);
  return r;
}

}  // namespace ifno
