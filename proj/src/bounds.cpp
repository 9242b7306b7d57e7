#include "divbayes/bounds.hpp"

#include "divbayes/special.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace divbayes {

MabnVariationalFactor::MabnVariationalFactor(UnitVector mean, double kappa_hat, GammaParams mag)
    : direction_mean(std::move(mean)), direction_concentration(kappa_hat), magnitude(mag) {
  require(kappa_hat > 0.0 && std::isfinite(kappa_hat),
          "MabnVariationalFactor: concentration must be positive");
}

double bouchard_lambda(double xi) {
  if (std::abs(xi) < 1e-6) return -0.125 + xi * xi / 96.0;
  return (0.5 - sigmoid(xi)) / (2.0 * xi);
}

double bouchard_log_sum_exp_bound(const Vector& xs, double gamma) {
  CompensatedSum s;
  s += gamma;
  for (Eigen::Index k = 0; k < xs.size(); ++k) s += softplus(xs(k) - gamma);
  return s.value();
}

double bouchard_logistic_bound(double x, double xi) {
  require(xi > 0.0, "bouchard_logistic_bound: xi must be positive");
  return softplus(-xi) - 0.5 * (x - xi) - bouchard_lambda(xi) * (x * x - xi * xi);
}

double expected_sq_norm_of_sum(const std::vector<MabnVariationalFactor>& factors, int count) {
  require(count >= 0 && static_cast<std::size_t>(count) <= factors.size(),
          "expected_sq_norm_of_sum: count out of range");
  if (count == 0) return 0.0;
  const int p = factors.front().direction_mean.dim();
  CompensatedSum trace;
  Vector mean_sum = Vector::Zero(p);
  for (int j = 0; j < count; ++j) {
    const auto& f = factors[j];
    require(f.direction_mean.dim() == p, "expected_sq_norm_of_sum: dimension mismatch");
    const double a = mean_resultant_length(p, f.direction_concentration);
    trace += 1.0 - a * a;
    mean_sum += a * f.direction_mean.coords();
  }
  return trace.value() + mean_sum.squaredNorm();
}

bool logistic_partition_bound(int ambient_dim, bool paper_area) {
  return sphere_area(ambient_dim, paper_area) >= 1.0;
}

namespace {

// log Z(kappa sqrt(t)) and its derivative in t.
std::pair<double, double> exact_log_partition(double t, double kappa, int p) {
  const double r = kappa * std::sqrt(t);
  const double value = -log_vmf_normalizer(p, r);
  // A_p(r) / r tends to 1 / p at the origin.
  const double ratio = r < 1e-6 ? 1.0 / p : mean_resultant_length(p, r) / r;
  return {value, 0.5 * kappa * kappa * ratio};
}

}  // namespace

double log_partition_upper_bound(double expected_sq_norm, double kappa, const BoundAuxParams& aux,
                                 int ambient_dim, bool paper_area) {
  require(expected_sq_norm >= 0.0, "log_partition_upper_bound: negative expected norm");
  if (aux.anchor >= 0.0) {
    const auto [h, dh] = exact_log_partition(aux.anchor, kappa, ambient_dim);
    return h + dh * (expected_sq_norm - aux.anchor);
  }
  require(aux.xi > 0.0, "log_partition_upper_bound: xi must be positive");
  const double area = sphere_area(ambient_dim, paper_area);
  const double lam = bouchard_lambda(aux.xi);
  const double g = aux.gamma;
  const double xi = aux.xi;
  return g + area * (softplus(-xi) + 0.5 * (xi - g) + lam * (xi * xi - g * g)) -
         lam * kappa * kappa * expected_sq_norm * area;
}

double log_partition_bound_slope(double kappa, const BoundAuxParams& aux, int ambient_dim, bool paper_area) {
  if (aux.anchor >= 0.0) return exact_log_partition(aux.anchor, kappa, ambient_dim).second;
  return -bouchard_lambda(aux.xi) * kappa * kappa * sphere_area(ambient_dim, paper_area);
}

BoundAuxParams optimize_partition_aux(double expected_sq_norm, double kappa, int ambient_dim,
                                      BoundAuxParams start, bool paper_area, int rounds) {
  if (!logistic_partition_bound(ambient_dim, paper_area)) {
    require(expected_sq_norm >= 0.0, "optimize_partition_aux: negative expected norm");
    BoundAuxParams aux = start;
    aux.anchor = expected_sq_norm;
    return aux;
  }
  require(start.xi > 0.0, "optimize_partition_aux: xi must be positive");
  const double area = sphere_area(ambient_dim, paper_area);
  const double q = kappa * kappa * expected_sq_norm;
  BoundAuxParams aux = start;
  aux.anchor = -1.0;
  for (int it = 0; it < rounds; ++it) {
    const double lam = bouchard_lambda(aux.xi);
    aux.gamma = (1.0 - 0.5 * area) / (2.0 * area * lam);
    const double xi_new = std::max(1e-8, std::sqrt(aux.gamma * aux.gamma + q));
    const bool done = std::abs(xi_new - aux.xi) <= 1e-12 * std::max(1.0, xi_new);
    aux.xi = xi_new;
    if (done) break;
  }
  return aux;
}

double mabn_elbo_prior_term(const std::vector<MabnVariationalFactor>& factors,
                            const MabnHyper& hyper, const std::vector<BoundAuxParams>& aux,
                            bool paper_area) {
  const std::size_t K = factors.size();
  require(K >= 1, "mabn_elbo_prior_term: no factors");
  require(aux.size() == K - 1, "mabn_elbo_prior_term: need one aux pair per node i >= 2");
  const int p = hyper.dim();
  const double kappa = hyper.concentration;
  std::vector<double> a(K);
  for (std::size_t k = 0; k < K; ++k) {
    require(factors[k].direction_mean.dim() == p, "mabn_elbo_prior_term: dimension mismatch");
    a[k] = mean_resultant_length(p, factors[k].direction_concentration);
  }
  CompensatedSum total;
  total += kappa * a[0] * hyper.base_direction.dot(factors[0].direction_mean.coords());
  Vector mean_sum = a[0] * factors[0].direction_mean.coords();
  double trace_sum = 1.0 - a[0] * a[0];
  for (std::size_t i = 1; i < K; ++i) {
    const Vector& ai = factors[i].direction_mean.coords();
    total += -kappa * a[i] * mean_sum.dot(ai);
    const double esn = trace_sum + mean_sum.squaredNorm();
    total += -log_partition_upper_bound(esn, kappa, aux[i - 1], p, paper_area);
    mean_sum += a[i] * ai;
    trace_sum += 1.0 - a[i] * a[i];
  }
  const double a1 = hyper.magnitude.shape;
  const double a2 = hyper.magnitude.rate;
  total += static_cast<double>(K) * (a1 * std::log(a2) - std::lgamma(a1));
  for (const auto& f : factors) {
    const auto m = gamma_moments(f.magnitude);
    total += (a1 - 1.0) * m.mean_log - a2 * m.mean;
  }
  return total.value();
}

double mabn_entropy_term(const std::vector<MabnVariationalFactor>& factors,
                         bool include_normalizer) {
  CompensatedSum total;
  for (const auto& f : factors) {
    const int p = f.direction_mean.dim();
    const double kh = f.direction_concentration;
    const double a = mean_resultant_length(p, kh);
    total += kh * a * f.direction_mean.coords().squaredNorm();
    if (include_normalizer) total += log_vmf_normalizer(p, kh);
    const double r = f.magnitude.shape;
    const double s = f.magnitude.rate;
    const double ls = std::log(s);
    total += r * ls - std::lgamma(r) + (r - 1.0) * (digamma(r) - ls) - r;
  }
  return total.value();
}

double expected_quadratic_form(const Vector& x, const MabnVariationalFactor& factor) {
  const int p = factor.direction_mean.dim();
  require(x.size() == p, "expected_quadratic_form: dimension mismatch");
  const double kh = factor.direction_concentration;
  const double xx = x.squaredNorm();
  if (kh < kUniformConcentration) return xx / p;
  const double a = mean_resultant_length(p, kh);
  const double proj = factor.direction_mean.dot(x);
  return (a / kh) * xx + (1.0 - p * a / kh) * proj * proj;
}

}  // namespace divbayes
