#ifndef DIVBAYES_TESTS_ORACLES_HPP
#define DIVBAYES_TESTS_ORACLES_HPP

// Independent reference computations used only by tests.

#include "divbayes/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

using divbayes::Vector;

inline constexpr double kPi = 3.14159265358979323846;

// Integral of f over the unit circle.
inline double integrate_circle(const std::function<double(const Vector&)>& f, int n = 4096) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * kPi * (i + 0.5) / n;
    Vector y(2);
    y << std::cos(t), std::sin(t);
    s += f(y);
  }
  return s * 2.0 * kPi / n;
}

// Gauss-Legendre nodes and weights on [-1, 1] by Newton on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

// Integral of f over the unit sphere in R^3: Gauss-Legendre in cos(theta),
// midpoint rule in phi.
inline double integrate_sphere3(const std::function<double(const Vector&)>& f, int n_theta = 96,
                                int n_phi = 192) {
  std::vector<double> x;
  std::vector<double> w;
  gauss_legendre(n_theta, x, w);
  double s = 0.0;
  for (int i = 0; i < n_theta; ++i) {
    const double ct = x[i];
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    double ring = 0.0;
    for (int j = 0; j < n_phi; ++j) {
      const double ph = 2.0 * kPi * (j + 0.5) / n_phi;
      Vector y(3);
      y << st * std::cos(ph), st * std::sin(ph), ct;
      ring += f(y);
    }
    s += w[i] * ring * 2.0 * kPi / n_phi;
  }
  return s;
}

// Asymptotic Kolmogorov survival function P(K > lambda).
inline double kolmogorov_survival(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    s += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

// One-sample KS p-value against a continuous CDF.
inline double ks_one_sample(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  const double sn = std::sqrt(n);
  return kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d);
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d);
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Welch two-sample z statistic for a difference of means.
inline double welch_z(const std::vector<double>& a, const std::vector<double>& b) {
  const double se = std::sqrt(variance(a) / a.size() + variance(b) / b.size());
  return (mean(a) - mean(b)) / se;
}

// Standard error of the mean of a correlated series by batch means.
inline double batch_means_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t len = v.size() / batches;
  std::vector<double> bm;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += v[b * len + i];
    bm.push_back(s / len);
  }
  return std::sqrt(variance(bm) / batches);
}

// Raw power series of I_nu(x), summed directly. For modest x only.
inline double bessel_i_series(double nu, double x) {
  double term = std::pow(0.5 * x, nu) / std::tgamma(nu + 1.0);
  double s = term;
  for (int k = 1; k < 500; ++k) {
    term *= 0.25 * x * x / (k * (k + nu));
    s += term;
    if (term < 1e-17 * s) break;
  }
  return s;
}

}  // namespace oracle

#endif  // DIVBAYES_TESTS_ORACLES_HPP
