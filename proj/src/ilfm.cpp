#include "divbayes/ilfm.hpp"

#include "divbayes/bmem.hpp"
#include "divbayes/special.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace divbayes {

void IlfmConfig::validate() const {
  if (!(kappa >= 0.0)) throw ConfigError("ilfm: kappa must be >= 0");
  if (!(alpha > 0.0)) throw ConfigError("ilfm: alpha must be positive");
  if (!(magnitude_shape > 0.0) || !(magnitude_rate > 0.0)) throw ConfigError("ilfm: magnitude prior must be positive");
  if (resample_noise && (!(noise_prior_shape > 0.0) || !(noise_prior_rate > 0.0)))
    throw ConfigError("ilfm: noise prior must be positive");
  if (!(ghmc.step_size > 0.0) || ghmc.leapfrog_steps < 1) throw ConfigError("ilfm: bad GHMC settings");
  if (magnitude_steps < 0) throw ConfigError("ilfm: magnitude_steps must be >= 0");
  if (!(magnitude_proposal > 0.0)) throw ConfigError("ilfm: magnitude_proposal must be positive");
}

MabnHyper IlfmConfig::prior(int dim) const {
  return MabnHyper(UnitVector::axis(dim, 0), kappa, GammaParams(magnitude_shape, magnitude_rate));
}

std::vector<int> IlfmState::column_counts() const {
  std::vector<int> m(represented(), 0);
  for (int k = 0; k < represented(); ++k) m[k] = Z.col(k).sum();
  return m;
}

int IlfmState::num_active() const {
  int a = 0;
  for (int m : column_counts()) a += m > 0;
  return a;
}

int IlfmState::last_active() const {
  for (int k = represented() - 1; k >= 0; --k)
    if (Z.col(k).any()) return k;
  return -1;
}

double IlfmState::mu_star() const {
  const int la = last_active();
  return la < 0 ? 1.0 : std::min(1.0, sticks[la]);
}

void IlfmState::check_invariants() const {
  const int L = represented();
  require(L >= 1, "ilfm state: no represented feature");
  require(static_cast<int>(features.size()) == L && Z.cols() == L, "ilfm state: feature, stick and column counts differ");
  for (int k = 0; k < L; ++k) {
    require(sticks[k] > 0.0 && sticks[k] <= 1.0, "ilfm state: stick outside (0, 1]");
    if (k) require(sticks[k] < sticks[k - 1], "ilfm state: sticks not strictly decreasing");
  }
  require((Z.array() == 0 || Z.array() == 1).all(), "ilfm state: allocations must be binary");
  require(last_active() < L - 1, "ilfm state: last represented feature must be inactive");
  require(slice > 0.0 && slice <= mu_star(), "ilfm state: slice outside (0, mu*]");
  require(noise_variance > 0.0, "ilfm state: noise variance must be positive");
  for (std::size_t k = 0; k < features.size(); ++k)
    require(std::abs(features.direction(k).coords().norm() - 1.0) < 1e-9, "ilfm state: direction off the sphere");
}

double default_noise_variance(const Matrix& X) {
  require(X.size() >= 2, "default_noise_variance: need data");
  const double mean = X.mean();
  const double var = (X.array() - mean).square().sum() / static_cast<double>(X.size() - 1);
  const double sd = std::sqrt(var);
  require(sd > 0.0, "default_noise_variance: constant data");
  return 0.25 * sd;
}

namespace {

void append_feature(IlfmState& st, double stick, const MabnHyper& hyper, Rng& rng) {
  auto [dir, mag] = ima_next_component(st.features, hyper, rng);
  st.features.push_back(std::move(dir), mag);
  st.sticks.push_back(stick);
  st.Z.conservativeResize(st.Z.rows(), st.Z.cols() + 1);
  st.Z.col(st.Z.cols() - 1).setZero();
}

Matrix feature_matrix(const ComponentSet& f) {
  Matrix W(static_cast<Eigen::Index>(f.size()), f.dim());
  for (std::size_t k = 0; k < f.size(); ++k) W.row(static_cast<Eigen::Index>(k)) = f.vector(k).transpose();
  return W;
}

Matrix residual(const IlfmState& st, const Matrix& X) {
  return X - st.Z.cast<double>() * feature_matrix(st.features);
}

// Strictly inside (lo, hi).
double inside(double x, double lo, double hi) {
  if (x <= lo) x = std::nextafter(lo, hi);
  if (x >= hi) x = std::nextafter(hi, lo);
  return x;
}

double sample_log_concave_in_log_space(double a, double b_minus_1, double lo, double hi, Rng& rng,
                                       SweepStats* stats) {
  // Density in u = log mu: exp(a u) (1 - e^u)^(b-1) on [log lo, log hi].
  LogConcaveTarget t;
  t.lower = std::log(lo);
  t.upper = std::log(hi);
  t.log_density = [a, b_minus_1](double u) {
    return a * u + (b_minus_1 == 0.0 ? 0.0 : b_minus_1 * std::log(-std::expm1(u)));
  };
  t.derivative = [a, b_minus_1](double u) {
    return a - (b_minus_1 == 0.0 ? 0.0 : b_minus_1 * std::exp(u) / (-std::expm1(u)));
  };
  const double w = t.upper - t.lower;
  const auto r = ars_sample(t, {t.lower + 0.25 * w, t.lower + 0.5 * w, t.lower + 0.75 * w}, rng);
  if (r.used_fallback && stats) {
    ++stats->ars_fallbacks;
    stats->events.push_back("stick sampler fallback: " + r.event);
  }
  return std::exp(r.value);
}

}  // namespace

double new_stick_log_density(double u, int N, double alpha) {
  if (u >= 0.0) return -std::numeric_limits<double>::infinity();
  if (N == 0) return alpha * u;
  const double t = -std::expm1(u);
  double h = 0.0;
  double tn = 1.0;
  for (int n = 1; n <= N; ++n) {
    tn *= t;
    h += tn / n;
  }
  return alpha * h + alpha * u + N * std::log(t);
}

double new_stick_log_density_derivative(double u, int N, double alpha) {
  if (N == 0) return alpha;
  const double t = -std::expm1(u);
  return alpha * std::pow(t, N) - N * std::exp(u) / t;
}

double sample_new_stick(double prev, int N, double alpha, Rng& rng, ArsResult* info) {
  require(prev > 0.0 && prev <= 1.0, "sample_new_stick: prev must be in (0, 1]");
  require(N >= 0 && alpha > 0.0, "sample_new_stick: bad arguments");
  LogConcaveTarget t;
  t.upper = std::log(prev);
  t.log_density = [N, alpha](double u) { return new_stick_log_density(u, N, alpha); };
  t.derivative = [N, alpha](double u) { return new_stick_log_density_derivative(u, N, alpha); };
  const double b = t.upper;
  std::vector<double> start{b - 0.05, b - 1.0, b - 4.0};
  if (N > 0) start.push_back(std::min(b - 0.01, std::log(alpha / (N + alpha))));
  const auto r = ars_sample(t, start, rng);
  if (info) *info = r;
  return inside(std::exp(r.value), 0.0, prev);
}

IlfmState ilfm_initial_state(int N, int dim, const IlfmConfig& config, Rng& rng) {
  config.validate();
  require(N >= 0 && dim >= 2, "ilfm_initial_state: bad shape");
  IlfmState st;
  st.features = ComponentSet(dim);
  st.Z = Allocation::Zero(N, 0);
  st.noise_variance = config.noise_variance > 0.0 ? config.noise_variance : 1.0;
  append_feature(st, sample_new_stick(1.0, N, config.alpha, rng), config.prior(dim), rng);
  st.slice = uniform01(rng);
  return st;
}

IlfmState ilfm_data_initial_state(const Matrix& X, int num_features, const IlfmConfig& config, Rng& rng) {
  config.validate();
  require(num_features >= 0, "ilfm_data_initial_state: negative feature count");
  require(X.rows() >= 1 && X.cols() >= 2, "ilfm_data_initial_state: need data");
  const int N = static_cast<int>(X.rows());
  const int D = static_cast<int>(X.cols());
  IlfmState st;
  st.features = ComponentSet(D);
  st.noise_variance = config.noise_variance > 0.0 ? config.noise_variance : default_noise_variance(X);
  Allocation Z = Allocation::Zero(N, num_features);
  for (int k = 0; k < num_features; ++k) {
    for (int n = 0; n < N; ++n) Z(n, k) = uniform01(rng) < 0.5 ? 1 : 0;
    Z(static_cast<int>(uniform01(rng) * N) % N, k) = 1;
  }
  const Matrix Zd = Z.cast<double>();
  const Matrix G = Zd.transpose() * Zd + st.noise_variance * Matrix::Identity(num_features, num_features);
  const Matrix W = G.ldlt().solve(Zd.transpose() * X);
  double mu = 1.0;
  for (int k = 0; k < num_features; ++k) {
    mu *= std::pow(uniform01(rng), 1.0 / config.alpha);
    mu = std::max(mu, 1e-300 * (num_features + 2 - k));
    const Vector w = W.row(k).transpose();
    const double r = w.norm();
    st.features.push_back(r > 1e-12 ? UnitVector::normalized(w) : uniform_sphere_sample(D, rng),
                          r > 1e-12 ? r : config.magnitude_shape / config.magnitude_rate);
    st.sticks.push_back(mu);
  }
  st.Z = Z;
  const MabnHyper hyper = config.prior(D);
  append_feature(st, sample_new_stick(st.sticks.empty() ? 1.0 : st.sticks.back(), N, config.alpha, rng), hyper, rng);
  st.slice = uniform01(rng) * st.mu_star();
  st.check_invariants();
  return st;
}

double slice_sample_auxiliary(IlfmState& state, Rng& rng) {
  // uniform01 is in (0, 1), so the draw lies in (0, mu*).
  state.slice = uniform01(rng) * state.mu_star();
  return state.slice;
}

int extend_features(IlfmState& state, const IlfmConfig& config, Rng& rng, SweepStats* stats) {
  const MabnHyper hyper = config.prior(state.features.dim());
  int added = 0;
  while (state.sticks.back() > state.slice) {
    ArsResult info;
    const double mu = sample_new_stick(state.sticks.back(), state.num_examples(), config.alpha, rng, &info);
    if (info.used_fallback && stats) {
      ++stats->ars_fallbacks;
      stats->events.push_back("new stick fallback: " + info.event);
    }
    append_feature(state, mu, hyper, rng);
    ++added;
    if (added > 100000) throw NumericalError("extend_features: slice too small to represent");
  }
  if (stats) stats->added += added;
  return added;
}

double assignment_log_odds(const IlfmState& st, const std::vector<int>& counts, int n, int k, const Vector& e,
                           const IlfmConfig& config) {
  const double mu = st.sticks[k];
  const Vector w = st.features.vector(k);
  const double lik = (e.dot(w) - 0.5 * w.squaredNorm()) / st.noise_variance;
  if (config.strict_paper) return std::log(mu / st.mu_star()) - std::log1p(-mu) + lik;
  double rest = 1.0;  // min(1, stick of the last active feature other than k)
  for (int j = st.represented() - 1; j >= 0; --j) {
    if (j != k && counts[j] > 0) {
      rest = std::min(1.0, st.sticks[j]);
      break;
    }
  }
  const int others = counts[k] - st.Z(n, k);
  const double mu1 = std::min(rest, mu);
  const double mu0 = others > 0 ? mu1 : rest;
  if (!(st.slice < mu1)) return -std::numeric_limits<double>::infinity();
  if (!(st.slice < mu0)) return std::numeric_limits<double>::infinity();
  return std::log(mu) - std::log1p(-mu) + std::log(mu0) - std::log(mu1) + lik;
}

void resample_assignments(IlfmState& st, const Matrix& X, const IlfmConfig& config, Rng& rng) {
  require(X.rows() == st.num_examples() && X.cols() == st.features.dim(), "resample_assignments: shape mismatch");
  Matrix R = residual(st, X);
  auto counts = st.column_counts();
  const int L = st.represented();
  for (int n = 0; n < st.num_examples(); ++n) {
    for (int k = 0; k < L; ++k) {
      if (!(st.sticks[k] > st.slice)) continue;
      const Vector w = st.features.vector(k);
      const Vector e = R.row(n).transpose() + st.Z(n, k) * w;
      const double lo = assignment_log_odds(st, counts, n, k, e, config);
      const int z = std::log(uniform01(rng)) < -softplus(-lo) ? 1 : 0;
      counts[k] += z - st.Z(n, k);
      st.Z(n, k) = z;
      R.row(n) = (e - z * w).transpose();
    }
  }
}

int trim_inactive_tail(IlfmState& st) {
  const int keep = st.last_active() + 2;
  const int L = st.represented();
  if (L <= keep) return 0;
  st.features.truncate(keep);
  st.sticks.resize(keep);
  st.Z.conservativeResize(st.Z.rows(), keep);
  return L - keep;
}

double sample_truncated_beta(double a, double b, double lo, double hi, Rng& rng) {
  require(a > 0.0 && b > 0.0, "sample_truncated_beta: parameters must be positive");
  require(lo >= 0.0 && hi <= 1.0 && lo < hi, "sample_truncated_beta: bad interval");
  using boost::math::ibeta;
  using boost::math::ibetac;
  const double Fa = ibeta(a, b, lo);
  const double Fb = ibeta(a, b, hi);
  double x = std::numeric_limits<double>::quiet_NaN();
  if (Fb - Fa > 1e-10 && Fa < 0.5) {
    x = boost::math::ibeta_inv(a, b, Fa + uniform01(rng) * (Fb - Fa));
  } else {
    const double Ga = ibetac(a, b, lo);
    const double Gb = ibetac(a, b, hi);
    if (Ga - Gb > 1e-10) x = boost::math::ibetac_inv(a, b, Gb + uniform01(rng) * (Ga - Gb));
  }
  if (!std::isfinite(x) || x < lo || x > hi) {
    // Mass too thin for the inverse CDF; sample in log space instead.
    x = sample_log_concave_in_log_space(a, b - 1.0, std::max(lo, 1e-300), hi, rng, nullptr);
  }
  return x;
}

void resample_stick_weights(IlfmState& st, const IlfmConfig& config, Rng& rng, SweepStats* stats) {
  const int L = st.represented();
  const int N = st.num_examples();
  const auto m = st.column_counts();
  for (int k = 0; k < L; ++k) {
    const double hi = k == 0 ? 1.0 : st.sticks[k - 1];
    if (k == L - 1) {
      ArsResult info;
      st.sticks[k] = sample_new_stick(hi, N, config.alpha, rng, &info);
      if (info.used_fallback && stats) {
        ++stats->ars_fallbacks;
        stats->events.push_back("boundary stick fallback: " + info.event);
      }
      continue;
    }
    const double lo = st.sticks[k + 1];
    double x = 0.0;
    if (m[k] > 0) {
      x = sample_truncated_beta(m[k], N - m[k] + 1.0, lo, hi, rng);
    } else {
      x = sample_log_concave_in_log_space(0.0, static_cast<double>(N), lo, hi, rng, stats);
    }
    st.sticks[k] = inside(x, lo, hi);
  }
}

namespace {

// Sum over examples using feature k of the residual with k removed.
Vector feature_evidence(const IlfmState& st, const Matrix& X, int k, int* m_out) {
  const Matrix R = residual(st, X);
  const Vector w = st.features.vector(k);
  Vector E = Vector::Zero(X.cols());
  int m = 0;
  for (int n = 0; n < st.num_examples(); ++n) {
    if (st.Z(n, k)) {
      E += R.row(n).transpose() + w;
      ++m;
    }
  }
  if (m_out) *m_out = m;
  return E;
}

TargetOnSphere direction_target(const IlfmState& st, int k, const Vector& E, const IlfmConfig& config) {
  const int L = st.represented();
  const int D = st.features.dim();
  std::vector<Vector> dirs;
  for (int j = 0; j < L; ++j) dirs.push_back(st.features.direction(j).coords());
  Vector prefix = Vector::Zero(D);
  for (int j = 0; j < k; ++j) prefix += dirs[j];
  const double kappa = config.kappa;
  const Vector base = UnitVector::axis(D, 0).coords();
  const Vector lik = st.features.magnitude(k) / st.noise_variance * E;
  // Parent sums of later features with k removed.
  std::vector<Vector> later;
  Vector run = prefix;
  for (int j = k + 1; j < L; ++j) {
    later.push_back(run);
    run += dirs[j];
  }
  auto log_prob = [=](const UnitVector& w) {
    const Vector& v = w.coords();
    double s = lik.dot(v);
    if (kappa > 0.0) {
      if (k == 0) {
        s += kappa * base.dot(v);
      } else if (prefix.norm() >= kDegenerateParentSum) {
        s -= kappa * prefix.dot(v) / prefix.norm();
      }
      for (int j = k + 1; j < L; ++j) {
        const Vector S = later[j - k - 1] + v;
        const double nrm = S.norm();
        if (nrm >= kDegenerateParentSum) s -= kappa * S.dot(dirs[j]) / nrm;
      }
    }
    return s;
  };
  auto grad = [=](const UnitVector& w) -> Vector {
    const Vector& v = w.coords();
    Vector g = lik;
    if (kappa > 0.0) {
      if (k == 0) {
        g += kappa * base;
      } else if (prefix.norm() >= kDegenerateParentSum) {
        g -= kappa * prefix / prefix.norm();
      }
      for (int j = k + 1; j < L; ++j) {
        const Vector S = later[j - k - 1] + v;
        const double nrm = S.norm();
        if (nrm >= kDegenerateParentSum) g -= kappa * (dirs[j] - S.dot(dirs[j]) / (nrm * nrm) * S) / nrm;
      }
    }
    return g;
  };
  return {log_prob, grad};
}

double magnitude_log_target(double r, double proj, int m, double sigma2, const GammaParams& prior) {
  if (!(r > 0.0)) return -std::numeric_limits<double>::infinity();
  return gamma_log_density(r, prior) + (r * proj - 0.5 * m * r * r) / sigma2;
}

}  // namespace

TargetOnSphere feature_direction_target(const IlfmState& state, const Matrix& X, int k, const IlfmConfig& config) {
  require(k >= 0 && k < state.represented(), "feature_direction_target: index out of range");
  return direction_target(state, k, feature_evidence(state, X, k, nullptr), config);
}

double feature_magnitude_log_target(const IlfmState& state, const Matrix& X, int k, double r,
                                    const IlfmConfig& config) {
  int m = 0;
  const Vector E = feature_evidence(state, X, k, &m);
  return magnitude_log_target(r, state.features.direction(k).dot(E), m, state.noise_variance,
                              GammaParams(config.magnitude_shape, config.magnitude_rate));
}

GhmcResult resample_feature_vector(IlfmState& st, const Matrix& X, int k, const IlfmConfig& config, Rng& rng,
                                   SweepStats* stats) {
  require(k >= 0 && k < st.represented(), "resample_feature_vector: index out of range");
  int m = 0;
  const Vector E = feature_evidence(st, X, k, &m);
  GhmcConfig gc = config.ghmc;
  gc.strict_paper = config.strict_paper;
  const auto target = direction_target(st, k, E, config);
  auto res = ghmc_step(st.features.direction(k), target, gc, rng);
  if (res.numerical_failure && stats) stats->events.push_back("feature " + std::to_string(k) + ": " + res.diagnostic);
  st.features.set_direction(k, res.state);
  if (stats) {
    ++stats->ghmc_attempted;
    stats->ghmc_accepted += res.accepted;
  }
  const GammaParams prior(config.magnitude_shape, config.magnitude_rate);
  const double proj = st.features.direction(k).dot(E);
  double r = st.features.magnitude(k);
  double cur = magnitude_log_target(r, proj, m, st.noise_variance, prior);
  for (int it = 0; it < config.magnitude_steps; ++it) {
    const double r_new = truncated_normal_sample(r, config.magnitude_proposal, rng);
    if (!(r_new > 0.0)) continue;
    const double nxt = magnitude_log_target(r_new, proj, m, st.noise_variance, prior);
    const double log_ratio = nxt - cur + truncated_normal_log_hastings(r, r_new, config.magnitude_proposal);
    const bool acc = std::isfinite(log_ratio) && std::log(uniform01(rng)) < log_ratio;
    if (acc) {
      r = r_new;
      cur = nxt;
    }
    if (stats) {
      ++stats->magnitude_attempted;
      stats->magnitude_accepted += acc;
    }
  }
  st.features.set_magnitude(k, r);
  return res;
}

void resample_noise_variance(IlfmState& st, const Matrix& X, const IlfmConfig& config, Rng& rng) {
  const Matrix R = residual(st, X);
  const double shape = config.noise_prior_shape + 0.5 * static_cast<double>(R.size());
  const double rate = config.noise_prior_rate + 0.5 * R.squaredNorm();
  st.noise_variance = 1.0 / gamma_sample(GammaParams(shape, rate), rng);
}

SweepStats ilfm_gibbs_sweep(IlfmState& st, const Matrix& X, const IlfmConfig& config, Rng& rng) {
  require(X.rows() == st.num_examples() && X.cols() == st.features.dim(), "ilfm_gibbs_sweep: shape mismatch");
  SweepStats stats;
  slice_sample_auxiliary(st, rng);
  extend_features(st, config, rng, &stats);
  resample_assignments(st, X, config, rng);
  stats.trimmed = trim_inactive_tail(st);
  resample_stick_weights(st, config, rng, &stats);
  for (int k = 0; k < st.represented(); ++k) resample_feature_vector(st, X, k, config, rng, &stats);
  if (config.resample_noise) resample_noise_variance(st, X, config, rng);
  // The stored slice is stale after the stick update; keep it inside (0, mu*].
  st.slice = std::min(st.slice, st.mu_star());
  return stats;
}

IlfmState ilfm_prior_draw(int N, int dim, const IlfmConfig& config, Rng& rng, double tail) {
  config.validate();
  require(N >= 0 && dim >= 2 && tail > 0.0, "ilfm_prior_draw: bad arguments");
  const MabnHyper hyper = config.prior(dim);
  IlfmState st;
  st.features = ComponentSet(dim);
  st.Z = Allocation::Zero(N, 0);
  st.noise_variance = config.noise_variance > 0.0 ? config.noise_variance : 1.0;
  double mu = 1.0;
  for (;;) {
    mu *= std::pow(uniform01(rng), 1.0 / config.alpha);
    if (!(mu > 0.0)) break;
    append_feature(st, mu, hyper, rng);
    for (int n = 0; n < N; ++n) st.Z(n, st.represented() - 1) = uniform01(rng) < mu ? 1 : 0;
    if (mu < tail) break;
  }
  trim_inactive_tail(st);
  if (st.last_active() == st.represented() - 1) throw NumericalError("ilfm_prior_draw: tail still active");
  st.slice = uniform01(rng) * st.mu_star();
  return st;
}

Matrix ilfm_generate_data(const IlfmState& st, Rng& rng) {
  Matrix X = st.Z.cast<double>() * feature_matrix(st.features);
  const double sd = std::sqrt(st.noise_variance);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] += sd * standard_normal(rng);
  return X;
}

Matrix active_feature_matrix(const IlfmState& st) {
  const auto m = st.column_counts();
  std::vector<int> idx;
  for (int k = 0; k < st.represented(); ++k)
    if (m[k] > 0) idx.push_back(k);
  Matrix W(static_cast<Eigen::Index>(idx.size()), st.features.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) W.row(static_cast<Eigen::Index>(i)) = st.features.vector(idx[i]).transpose();
  return W;
}

std::vector<double> active_sticks(const IlfmState& st) {
  const auto m = st.column_counts();
  std::vector<double> out;
  for (int k = 0; k < st.represented(); ++k)
    if (m[k] > 0) out.push_back(st.sticks[k]);
  return out;
}

double mean_pairwise_feature_angle(const IlfmState& st) {
  const Matrix W = active_feature_matrix(st);
  if (W.rows() < 2) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = i + 1; j < W.rows(); ++j, ++n) s += nonobtuse_angle(W.row(i).transpose(), W.row(j).transpose());
  return s / n;
}

Allocation infer_allocations(const IlfmState& st, const Matrix& X, const IlfmConfig& config, Rng& rng,
                             int gibbs_sweeps, int greedy_sweeps) {
  (void)config;
  require(X.cols() == st.features.dim(), "infer_allocations: dimension mismatch");
  const Matrix W = active_feature_matrix(st);
  const auto mu = active_sticks(st);
  const int K = static_cast<int>(W.rows());
  Allocation Z = Allocation::Zero(X.rows(), K);
  for (Eigen::Index n = 0; n < X.rows(); ++n) {
    Vector r = X.row(n).transpose();
    for (int sweep = 0; sweep < gibbs_sweeps + greedy_sweeps; ++sweep) {
      for (int k = 0; k < K; ++k) {
        const Vector w = W.row(k).transpose();
        const Vector e = r + Z(n, k) * w;
        const double lo = std::log(mu[k]) - std::log1p(-mu[k]) + (e.dot(w) - 0.5 * w.squaredNorm()) / st.noise_variance;
        const int z = sweep < gibbs_sweeps ? (std::log(uniform01(rng)) < -softplus(-lo) ? 1 : 0) : (lo > 0.0 ? 1 : 0);
        Z(n, k) = z;
        r = e - z * w;
      }
    }
  }
  return Z;
}

IlfmMetrics ilfm_metrics(const IlfmState& st, const Matrix& X, const Allocation& Z) {
  const Matrix W = active_feature_matrix(st);
  require(Z.rows() == X.rows() && Z.cols() == W.rows(), "ilfm_metrics: allocation shape mismatch");
  require(X.rows() >= 1, "ilfm_metrics: no examples");
  const Matrix R = X - Z.cast<double>() * W;
  const double s2 = st.noise_variance;
  CompensatedSum l2;
  CompensatedSum ll;
  const double D = static_cast<double>(X.cols());
  for (Eigen::Index n = 0; n < R.rows(); ++n) {
    const double sq = R.row(n).squaredNorm();
    l2 += std::sqrt(sq);
    ll += -0.5 * D * std::log(2.0 * kPi * s2) - 0.5 * sq / s2;
  }
  const double N = static_cast<double>(X.rows());
  return {l2.value() / N, ll.value() / N};
}

void write_ilfm_state(std::ostream& os, const IlfmState& st) {
  char buf[40];
  const auto f = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "divbayes-ilfm 1\n" << st.num_examples() << ' ' << st.represented() << ' ' << st.features.dim() << '\n';
  os << f(st.slice) << ' ' << f(st.noise_variance) << '\n';
  for (int k = 0; k < st.represented(); ++k) os << (k ? " " : "") << f(st.sticks[k]);
  os << '\n';
  write_component_set(os, st.features);
  for (int n = 0; n < st.num_examples(); ++n) {
    for (int k = 0; k < st.represented(); ++k) os << (k ? " " : "") << st.Z(n, k);
    os << '\n';
  }
}

IlfmState read_ilfm_state(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "divbayes-ilfm" || version != 1) throw DataError("ilfm state: bad header");
  int N = 0, L = 0, D = 0;
  if (!(is >> N >> L >> D) || N < 0 || L < 1 || D < 2) throw DataError("ilfm state: bad shape line");
  IlfmState st;
  if (!(is >> st.slice >> st.noise_variance)) throw DataError("ilfm state: bad slice line");
  st.sticks.resize(L);
  for (auto& s : st.sticks)
    if (!(is >> s)) throw DataError("ilfm state: bad sticks");
  st.features = read_component_set(is);
  if (static_cast<int>(st.features.size()) != L || st.features.dim() != D) throw DataError("ilfm state: feature block mismatch");
  st.Z = Allocation::Zero(N, L);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < L; ++k)
      if (!(is >> st.Z(n, k))) throw DataError("ilfm state: bad allocation row");
  try {
    st.check_invariants();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("ilfm state: ") + e.what());
  }
  return st;
}

}  // namespace divbayes
