#ifndef DIVBAYES_ARS_HPP
#define DIVBAYES_ARS_HPP

#include "divbayes/common.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace divbayes {

// Log-concave density on [lower, upper], known up to a constant, with its
// derivative. lower may be -infinity, in which case the derivative must be
// positive somewhere to the left of the start points.
struct LogConcaveTarget {
  std::function<double(double)> log_density;
  std::function<double(double)> derivative;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

struct ArsResult {
  double value = 0.0;
  bool used_fallback = false;
  int envelope_points = 0;
  std::string event;  // why the fallback ran, empty otherwise
};

// Tangent-envelope adaptive rejection sampling. start holds at least two
// interior abscissae. Falls back to grid_inverse_cdf when the envelope cannot
// be built (non-concavity detected, no valid left or right anchor, or too
// many rejections).
ArsResult ars_sample(const LogConcaveTarget& target, std::vector<double> start, Rng& rng,
                     int max_points = 64);

// Inverse CDF on a uniform grid of `cells` cells over [lo, hi], uniform
// within the chosen cell.
double grid_inverse_cdf(const std::function<double(double)>& log_density, double lo, double hi, Rng& rng,
                        int cells = 4096);

// True when sampled derivatives are non-increasing on a grid over [lo, hi].
bool looks_log_concave(const LogConcaveTarget& target, double lo, double hi, int points = 64);

}  // namespace divbayes

#endif  // DIVBAYES_ARS_HPP
