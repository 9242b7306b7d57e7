#include "divbayes/ghmc.hpp"

#include <cmath>

namespace divbayes {

void GhmcConfig::validate() const {
  require(step_size > 0.0 && std::isfinite(step_size), "GhmcConfig: step_size must be positive");
  require(leapfrog_steps >= 1, "GhmcConfig: leapfrog_steps must be >= 1");
}

Vector tangent_project(const Vector& v, const UnitVector& w) {
  require(v.size() == w.dim(), "tangent_project: dimension mismatch");
  return v - w.coords() * w.dot(v);
}

namespace {

Vector project_at(const Vector& v, const Vector& w) { return v - w * w.dot(v); }

}  // namespace

bool geodesic_leapfrog(PhasePoint& point, const TargetOnSphere& target, const GhmcConfig& config,
                       const Vector& origin) {
  const double eps = config.step_size;
  Vector& w = point.position;
  Vector& v = point.momentum;
  for (int t = 0; t < config.leapfrog_steps; ++t) {
    Vector g = target.grad_log_prob(UnitVector::normalized(w));
    if (!g.allFinite()) return false;
    v += 0.5 * eps * g;
    v = project_at(v, config.strict_paper ? origin : w);
    const double speed = v.norm();
    if (speed > 0.0) {
      const double c = std::cos(eps * speed);
      const double s = std::sin(eps * speed);
      const Vector w_old = w;
      w = c * w_old + (s / speed) * v;
      v = -speed * s * w_old + c * v;
      w.normalize();
    }
    g = target.grad_log_prob(UnitVector::normalized(w));
    if (!g.allFinite()) return false;
    v += 0.5 * eps * g;
    v = project_at(v, config.strict_paper ? origin : w);
    if (!w.allFinite() || !v.allFinite()) return false;
  }
  return true;
}

GhmcResult ghmc_step(const UnitVector& w, const TargetOnSphere& target, const GhmcConfig& config,
                     Rng& rng) {
  config.validate();
  const int p = w.dim();
  GhmcResult out{w, false, 0.0, false, {}};
  Vector v(p);
  for (int i = 0; i < p; ++i) v(i) = standard_normal(rng);
  v = tangent_project(v, w);
  const double lp0 = target.log_prob(w);
  if (!std::isfinite(lp0)) {
    out.numerical_failure = true;
    out.diagnostic = "non-finite log density at the current state";
    return out;
  }
  const double h = lp0 - 0.5 * v.squaredNorm();
  PhasePoint pt{w.coords(), v};
  if (!geodesic_leapfrog(pt, target, config, w.coords())) {
    out.numerical_failure = true;
    out.diagnostic = "non-finite gradient along the trajectory";
    return out;
  }
  UnitVector proposal = UnitVector::normalized(pt.position);
  const double lp1 = target.log_prob(proposal);
  if (!std::isfinite(lp1)) {
    out.numerical_failure = true;
    out.diagnostic = "non-finite log density at the proposal";
    return out;
  }
  const double h_star = lp1 - 0.5 * pt.momentum.squaredNorm();
  out.delta_h = h_star - h;
  const double u = uniform01(rng);
  if (std::log(u) < out.delta_h) {
    out.state = std::move(proposal);
    out.accepted = true;
  }
  return out;
}

}  // namespace divbayes
