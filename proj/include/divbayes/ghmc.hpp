#ifndef DIVBAYES_GHMC_HPP
#define DIVBAYES_GHMC_HPP

#include "divbayes/directional.hpp"

#include <functional>
#include <string>

namespace divbayes {

struct GhmcConfig {
  double step_size = 0.01;
  int leapfrog_steps = 20;
  // Project momentum at the starting point inside the loop instead of the
  // current point. Kept for comparison only; it breaks tangency.
  bool strict_paper = false;
  void validate() const;
};

// Unnormalized log density on the sphere and its ambient gradient.
struct TargetOnSphere {
  std::function<double(const UnitVector&)> log_prob;
  std::function<Vector(const UnitVector&)> grad_log_prob;
};

// v - w (w^T v)
Vector tangent_project(const Vector& v, const UnitVector& w);

struct GhmcResult {
  UnitVector state;
  bool accepted = false;
  double delta_h = 0.0;  // h* - h
  bool numerical_failure = false;
  std::string diagnostic;
};

// One transition: momentum refresh, T geodesic leapfrog steps, MH correction.
GhmcResult ghmc_step(const UnitVector& w, const TargetOnSphere& target, const GhmcConfig& config,
                     Rng& rng);

struct PhasePoint {
  Vector position;
  Vector momentum;
};

// Deterministic part of the transition, starting from a tangent momentum.
// origin is only used in strict_paper mode. Returns false on non-finite values.
bool geodesic_leapfrog(PhasePoint& point, const TargetOnSphere& target, const GhmcConfig& config,
                       const Vector& origin);

}  // namespace divbayes

#endif  // DIVBAYES_GHMC_HPP
