#ifndef DIVBAYES_DIRECTIONAL_HPP
#define DIVBAYES_DIRECTIONAL_HPP

#include "divbayes/common.hpp"

namespace divbayes {

inline constexpr double kUnitTolerance = 1e-9;

// A direction on the unit sphere in ambient dimension p >= 2.
class UnitVector {
 public:
  // Throws InvalidArgument unless |v| = 1 within kUnitTolerance.
  explicit UnitVector(Vector coords);

  // Rescales a nonzero vector onto the sphere.
  static UnitVector normalized(const Vector& v);
  static UnitVector axis(int dim, int index);

  const Vector& coords() const { return coords_; }
  int dim() const { return static_cast<int>(coords_.size()); }
  double dot(const Vector& v) const { return coords_.dot(v); }

 private:
  struct Trusted {};
  UnitVector(Vector coords, Trusted) : coords_(std::move(coords)) {}
  Vector coords_;
};

struct VmfParams {
  VmfParams(UnitVector mean, double concentration);
  UnitVector mean_direction;
  double concentration;
  int dim() const { return mean_direction.dim(); }
};

// Gamma with shape/rate parameterization.
struct GammaParams {
  GammaParams(double shape, double rate);
  double shape;
  double rate;
};

double vmf_log_density(const UnitVector& x, const VmfParams& params);

// Exact draw (Wood's rejection scheme). Uniform below kUniformConcentration.
UnitVector vmf_sample(const VmfParams& params, Rng& rng);
UnitVector uniform_sphere_sample(int dim, Rng& rng);

struct VmfMoments {
  Vector mean;
  Matrix covariance;
  double second_moment;  // E[x^T x]
};
VmfMoments vmf_moments(const VmfParams& params);

// Trace of the vMF covariance without forming the matrix: 1 - A_p(kappa)^2.
double vmf_covariance_trace(int dim, double kappa);

struct GammaMoments {
  double mean;
  double mean_log;
};
GammaMoments gamma_moments(const GammaParams& params);
double gamma_log_density(double x, const GammaParams& params);
double gamma_sample(const GammaParams& params, Rng& rng);

// arccos(|a.b| / (|a||b|)) in [0, pi/2].
double nonobtuse_angle(const Vector& a, const Vector& b);

// Surface area of the unit sphere {|y| = 1} in R^ambient_dim:
// 2 pi^{d/2} / Gamma(d/2). With paper_constant = true the exponent is
// shifted to (d+1)/2, the constant used verbatim by the log-partition bound
// derivation this library reproduces; it is the area of the sphere one
// dimension up.
double sphere_area(int ambient_dim, bool paper_constant = false);

}  // namespace divbayes

#endif  // DIVBAYES_DIRECTIONAL_HPP
