#ifndef DIVBAYES_BOUNDS_HPP
#define DIVBAYES_BOUNDS_HPP

#include "divbayes/mabn.hpp"

#include <vector>

namespace divbayes {

// q(a~) = vMF(direction_mean, direction_concentration), q(g) = Gamma(r, s).
struct MabnVariationalFactor {
  MabnVariationalFactor(UnitVector mean, double kappa_hat, GammaParams mag);
  UnitVector direction_mean;
  double direction_concentration;
  GammaParams magnitude;
};

struct BoundAuxParams {
  double gamma = 0.0;
  double xi = 1.0;
  // Tangent point of the concave form; negative selects the logistic form.
  double anchor = -1.0;
};

// (1/2 - sigmoid(xi)) / (2 xi); negative for xi > 0, limit -1/8 at 0.
double bouchard_lambda(double xi);

// gamma + sum_k log(1 + exp(x_k - gamma)) >= log sum_k exp(x_k).
double bouchard_log_sum_exp_bound(const Vector& xs, double gamma);

// Quadratic upper bound on log(1 + exp(-x)), tight at x = +-xi.
double bouchard_logistic_bound(double x, double xi);

// E||sum_{j<count} a~_j||^2 under independent vMF factors.
double expected_sq_norm_of_sum(const std::vector<MabnVariationalFactor>& factors, int count);

// True when the logistic form of the partition bound is used in dimension p.
// Below unit sphere area it stops bounding log Z, and the tangent of the exact
// log Z(kappa sqrt(t)), concave in t, is used instead.
bool logistic_partition_bound(int ambient_dim, bool paper_area = false);

// Upper bound on log Z_i with E||parent sum||^2 plugged in. paper_area selects
// the sphere-area constant (see sphere_area).
double log_partition_upper_bound(double expected_sq_norm, double kappa, const BoundAuxParams& aux,
                                 int ambient_dim, bool paper_area = false);

// Derivative of the bound in expected_sq_norm. It is affine in that argument.
double log_partition_bound_slope(double kappa, const BoundAuxParams& aux, int ambient_dim,
                                 bool paper_area = false);

// Coordinate-wise minimization of the bound above over (gamma, xi). Each step
// is exact, so the bound never increases. The concave form puts the anchor at
// expected_sq_norm.
BoundAuxParams optimize_partition_aux(double expected_sq_norm, double kappa, int ambient_dim,
                                      BoundAuxParams start, bool paper_area = false,
                                      int rounds = 50);

// Lower bound on E_q[log p(A)] under the type II prior, additive constant
// log C_p(kappa) dropped. aux holds one entry per node i >= 2.
double mabn_elbo_prior_term(const std::vector<MabnVariationalFactor>& factors,
                            const MabnHyper& hyper, const std::vector<BoundAuxParams>& aux,
                            bool paper_area = false);

// E_q[log q(A)] without the vMF normalizers sum_k log C_p(kappa_hat_k); set
// include_normalizer to add them.
double mabn_entropy_term(const std::vector<MabnVariationalFactor>& factors,
                         bool include_normalizer = false);

// E[(a~^T x)^2] under the direction factor.
double expected_quadratic_form(const Vector& x, const MabnVariationalFactor& factor);

}  // namespace divbayes

#endif  // DIVBAYES_BOUNDS_HPP
