#ifndef DIVBAYES_MABN_HPP
#define DIVBAYES_MABN_HPP

#include "divbayes/directional.hpp"

#include <iosfwd>
#include <utility>
#include <vector>

namespace divbayes {

// Type I keeps the normalized parent sum in the mean direction. Type II moves
// the parent-sum norm into the concentration.
enum class MabnVariant { TypeI, TypeII };

struct MabnHyper {
  // concentration == 0 is accepted and means uniform directions; it is the
  // non-diverse ablation of the prior.
  MabnHyper(UnitVector base, double kappa, GammaParams mag);
  UnitVector base_direction;
  double concentration;
  GammaParams magnitude;
  int dim() const { return base_direction.dim(); }
};

// Ordered components a_k = g_k * direction_k. Order is the network order.
class ComponentSet {
 public:
  ComponentSet() = default;
  explicit ComponentSet(int dim);

  void push_back(UnitVector direction, double magnitude);
  void pop_back();
  void truncate(std::size_t k);

  std::size_t size() const { return directions_.size(); }
  bool empty() const { return directions_.empty(); }
  int dim() const { return dim_; }

  const UnitVector& direction(std::size_t k) const { return directions_.at(k); }
  double magnitude(std::size_t k) const { return magnitudes_.at(k); }
  void set_direction(std::size_t k, UnitVector d);
  void set_magnitude(std::size_t k, double g);

  Vector vector(std::size_t k) const { return magnitudes_.at(k) * directions_.at(k).coords(); }
  // Sum of the first k directions.
  Vector direction_prefix_sum(std::size_t k) const;

  const std::vector<UnitVector>& directions() const { return directions_; }
  const std::vector<double>& magnitudes() const { return magnitudes_; }

 private:
  int dim_ = 0;
  std::vector<UnitVector> directions_;
  std::vector<double> magnitudes_;
};

// Text format, round-trips bit-exactly:
//   divbayes-components 1
//   <p> <K>
//   K lines of: <magnitude> <coord_1> ... <coord_p>
void write_component_set(std::ostream& os, const ComponentSet& set);
ComponentSet read_component_set(std::istream& is);

// Parent sums shorter than this give a uniform local density.
inline constexpr double kDegenerateParentSum = 1e-12;

ComponentSet sample_mabn(int K, const MabnHyper& hyper, Rng& rng);

double local_log_prob(const UnitVector& direction, const std::vector<UnitVector>& parents,
                      double kappa, MabnVariant variant);
double local_log_prob_from_sum(const UnitVector& direction, const Vector& parent_sum,
                               double kappa, MabnVariant variant);

// Direction part only; no magnitude terms.
double mabn_direction_log_density(const ComponentSet& set, const MabnHyper& hyper,
                                  MabnVariant variant);
double mabn_log_density(const ComponentSet& set, const MabnHyper& hyper, MabnVariant variant);

// The direction of node i = |existing| + 1 drawn from its local conditional.
UnitVector draw_local_direction(const Vector& parent_sum, const MabnHyper& hyper, Rng& rng);

std::pair<UnitVector, double> ima_next_component(const ComponentSet& existing,
                                                 const MabnHyper& hyper, Rng& rng);

}  // namespace divbayes

#endif  // DIVBAYES_MABN_HPP
