#ifndef DIVBAYES_SPECIAL_HPP
#define DIVBAYES_SPECIAL_HPP

namespace divbayes {

// log I_nu(x) for nu >= 0, x >= 0. Scaled power series around the peak term
// for moderate x, Hankel or Debye expansions beyond 1e5. Never overflows.
double log_bessel_i(double nu, double x);

// I_{nu+1}(x) / I_nu(x) by continued fraction (modified Lentz).
double bessel_ratio(double nu, double x);

// Below this concentration a vMF is treated as uniform on the sphere.
inline constexpr double kUniformConcentration = 1e-8;

// Mean resultant length A_p(kappa) = I_{p/2}(kappa) / I_{p/2-1}(kappa).
double mean_resultant_length(int dim, double kappa);

// log C_p(kappa), the vMF normalizer with respect to surface measure.
double log_vmf_normalizer(int dim, double kappa);

double digamma(double x);
double log_gamma(double x);

}  // namespace divbayes

#endif  // DIVBAYES_SPECIAL_HPP
