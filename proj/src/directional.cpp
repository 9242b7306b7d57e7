#include "divbayes/directional.hpp"

#include "divbayes/special.hpp"

#include <algorithm>
#include <cmath>

namespace divbayes {

UnitVector::UnitVector(Vector coords) : coords_(std::move(coords)) {
  require(coords_.size() >= 2, "UnitVector: dimension must be >= 2");
  require(coords_.allFinite(), "UnitVector: non-finite coordinates");
  require(std::abs(coords_.norm() - 1.0) <= kUnitTolerance,
          "UnitVector: coordinates are not unit norm");
}

UnitVector UnitVector::normalized(const Vector& v) {
  require(v.size() >= 2, "UnitVector: dimension must be >= 2");
  const double n = v.norm();
  require(n > 0.0 && std::isfinite(n), "UnitVector: cannot normalize zero vector");
  return UnitVector(v / n, Trusted{});
}

UnitVector UnitVector::axis(int dim, int index) {
  require(dim >= 2 && index >= 0 && index < dim, "UnitVector::axis: bad index");
  Vector e = Vector::Zero(dim);
  e(index) = 1.0;
  return UnitVector(std::move(e), Trusted{});
}

VmfParams::VmfParams(UnitVector mean, double kappa)
    : mean_direction(std::move(mean)), concentration(kappa) {
  require(kappa > 0.0 && std::isfinite(kappa), "VmfParams: concentration must be positive");
}

GammaParams::GammaParams(double a, double b) : shape(a), rate(b) {
  require(a > 0.0 && std::isfinite(a), "GammaParams: shape must be positive");
  require(b > 0.0 && std::isfinite(b), "GammaParams: rate must be positive");
}

double vmf_log_density(const UnitVector& x, const VmfParams& params) {
  require(x.dim() == params.dim(), "vmf_log_density: dimension mismatch");
  const double kappa = params.concentration;
  const double lin = kappa < kUniformConcentration
                         ? 0.0
                         : kappa * params.mean_direction.coords().dot(x.coords());
  return log_vmf_normalizer(x.dim(), kappa) + lin;
}

UnitVector uniform_sphere_sample(int dim, Rng& rng) {
  require(dim >= 2, "uniform_sphere_sample: dimension must be >= 2");
  Vector g(dim);
  double n = 0.0;
  do {
    for (int i = 0; i < dim; ++i) g(i) = standard_normal(rng);
    n = g.norm();
  } while (n < 1e-300);
  return UnitVector::normalized(g);
}

namespace {

double beta_sample(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y > 0.0) return x / (x + y);
  }
}

// Unit vector orthogonal to mu, uniform on that great sphere.
Vector tangent_direction(const Vector& mu, Rng& rng) {
  const int p = static_cast<int>(mu.size());
  for (;;) {
    Vector g(p);
    for (int i = 0; i < p; ++i) g(i) = standard_normal(rng);
    g -= mu * mu.dot(g);
    const double n = g.norm();
    if (n > 1e-12) return g / n;
  }
}

}  // namespace

UnitVector vmf_sample(const VmfParams& params, Rng& rng) {
  const int p = params.dim();
  const double kappa = params.concentration;
  if (kappa < kUniformConcentration) return uniform_sphere_sample(p, rng);
  const Vector& mu = params.mean_direction.coords();
  const double m = p - 1.0;
  // Envelope parameter written to avoid cancellation at large kappa.
  const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + m * std::log(1.0 - x0 * x0);
  double w = 0.0;
  double one_minus_w = 0.0;
  for (;;) {
    const double z = beta_sample(0.5 * m, 0.5 * m, rng);
    const double denom = 1.0 - (1.0 - b) * z;
    w = (1.0 - (1.0 + b) * z) / denom;
    one_minus_w = 2.0 * b * z / denom;
    const double u = uniform01(rng);
    if (kappa * w + m * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  const double radial = std::sqrt(std::max(0.0, one_minus_w * (1.0 + w)));
  Vector x = w * mu + radial * tangent_direction(mu, rng);
  return UnitVector::normalized(x);
}

VmfMoments vmf_moments(const VmfParams& params) {
  const int p = params.dim();
  const double kappa = params.concentration;
  const Vector& mu = params.mean_direction.coords();
  VmfMoments out;
  if (kappa < kUniformConcentration) {
    out.mean = Vector::Zero(p);
    out.covariance = Matrix::Identity(p, p) / p;
  } else {
    const double h = mean_resultant_length(p, kappa);
    out.mean = h * mu;
    out.covariance = (h / kappa) * Matrix::Identity(p, p) +
                     (1.0 - p * h / kappa - h * h) * (mu * mu.transpose());
  }
  out.second_moment = out.covariance.trace() + out.mean.squaredNorm();
  return out;
}

double vmf_covariance_trace(int dim, double kappa) {
  const double a = mean_resultant_length(dim, kappa);
  return 1.0 - a * a;
}

GammaMoments gamma_moments(const GammaParams& params) {
  return {params.shape / params.rate, digamma(params.shape) - std::log(params.rate)};
}

double gamma_log_density(double x, const GammaParams& params) {
  require(x > 0.0, "gamma_log_density: argument must be positive");
  const double a = params.shape;
  const double b = params.rate;
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
}

double gamma_sample(const GammaParams& params, Rng& rng) {
  std::gamma_distribution<double> g(params.shape, 1.0 / params.rate);
  double x = g(rng);
  while (x <= 0.0) x = g(rng);
  return x;
}

double nonobtuse_angle(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "nonobtuse_angle: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, "nonobtuse_angle: zero vector");
  const double c = std::clamp(std::abs(a.dot(b)) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

double sphere_area(int ambient_dim, bool paper_constant) {
  require(ambient_dim >= 2, "sphere_area: dimension must be >= 2");
  const double h = paper_constant ? 0.5 * (ambient_dim + 1) : 0.5 * ambient_dim;
  return 2.0 * std::exp(h * std::log(kPi) - std::lgamma(h));
}

}  // namespace divbayes
