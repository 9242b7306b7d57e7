#include "divbayes/special.hpp"

#include "divbayes/common.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <limits>

namespace divbayes {
namespace {

double series_log_bessel_i(double nu, double x) {
  const double q = 0.25 * x * x;
  // Index of the largest term: k(k + nu) ~ q.
  const double peak = std::floor(0.5 * (-nu + std::sqrt(nu * nu + x * x)));
  const double k0 = std::max(0.0, peak);
  const double log_peak = (2.0 * k0 + nu) * std::log(0.5 * x) -
                          std::lgamma(k0 + 1.0) - std::lgamma(k0 + nu + 1.0);
  double sum = 1.0;
  double term = 1.0;
  for (double k = k0;; k += 1.0) {
    term *= q / ((k + 1.0) * (k + 1.0 + nu));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  term = 1.0;
  for (double k = k0; k > 0.0; k -= 1.0) {
    term *= k * (k + nu) / q;
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return log_peak + std::log(sum);
}

// sqrt(2 pi x) e^{-x} I_nu(x) by its asymptotic series.
double hankel_sum(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 30; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (k * 8.0 * x);
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return sum;
}

double hankel_log_bessel_i(double nu, double x) {
  return x - 0.5 * std::log(2.0 * kPi * x) + std::log(hankel_sum(nu, x));
}

double debye_log_bessel_i(double nu, double x) {
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
  const double u3 = t * t2 *
                    (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 -
                     425425.0 * t2 * t2 * t2) /
                    414720.0;
  const double corr = 1.0 + u1 / nu + u2 / (nu * nu) + u3 / (nu * nu * nu);
  return nu * eta - 0.5 * std::log(2.0 * kPi * nu) - 0.5 * std::log(root) +
         std::log(corr);
}

}  // namespace

double log_bessel_i(double nu, double x) {
  require(nu >= 0.0, "log_bessel_i: order must be nonnegative");
  require(x >= 0.0, "log_bessel_i: argument must be nonnegative");
  if (x == 0.0) {
    return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  if (x <= 1e5) return series_log_bessel_i(nu, x);
  if (nu * nu < 0.05 * x) return hankel_log_bessel_i(nu, x);
  return debye_log_bessel_i(nu, x);
}

double bessel_ratio(double nu, double x) {
  require(nu >= 0.0 && x >= 0.0, "bessel_ratio: invalid arguments");
  if (x == 0.0) return 0.0;
  if (x > 1e4 && (nu + 1.0) * (nu + 1.0) < 0.05 * x) {
    return hankel_sum(nu + 1.0, x) / hankel_sum(nu, x);
  }
  // I_{nu+1}/I_nu = 1 / g with g = b_1 + 1 / (b_2 + ...), b_k = 2(nu + k) / x.
  constexpr double tiny = 1e-300;
  double g = 2.0 * (nu + 1.0) / x;
  double c = g;
  double d = 0.0;
  const long max_iter = 1000 + static_cast<long>(std::min(20.0 * x, 1e7));
  for (long k = 2; k <= max_iter; ++k) {
    const double b = 2.0 * (nu + static_cast<double>(k)) / x;
    d = b + d;
    if (std::abs(d) < tiny) d = tiny;
    c = b + 1.0 / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    g *= delta;
    if (std::abs(delta - 1.0) < 1e-16) return 1.0 / g;
  }
  throw NumericalError("bessel_ratio: continued fraction did not converge");
}

double mean_resultant_length(int dim, double kappa) {
  require(dim >= 2, "mean_resultant_length: dimension must be >= 2");
  require(kappa >= 0.0, "mean_resultant_length: negative concentration");
  if (kappa < kUniformConcentration) return 0.0;
  return bessel_ratio(0.5 * dim - 1.0, kappa);
}

double log_vmf_normalizer(int dim, double kappa) {
  require(dim >= 2, "log_vmf_normalizer: dimension must be >= 2");
  require(kappa >= 0.0, "log_vmf_normalizer: negative concentration");
  const double half = 0.5 * dim;
  if (kappa < kUniformConcentration) {
    // Limit of the normalizer: 1 / surface area.
    return std::lgamma(half) - std::log(2.0) - half * std::log(kPi);
  }
  const double nu = half - 1.0;
  return nu * std::log(kappa) - half * std::log(2.0 * kPi) -
         log_bessel_i(nu, kappa);
}

double digamma(double x) { return boost::math::digamma(x); }

double log_gamma(double x) { return std::lgamma(x); }

}  // namespace divbayes
