#include "divbayes/bmem.hpp"

#include "divbayes/ghmc.hpp"
#include "divbayes/special.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

namespace divbayes {

void BmemModel::validate() const {
  require(!experts.empty(), "BmemModel: no experts");
  require(experts.size() == gates.size(), "BmemModel: experts and gates differ in count");
  require(experts.dim() == gates.dim(), "BmemModel: experts and gates differ in dimension");
}

namespace {

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

Matrix component_matrix(const ComponentSet& s) {
  Matrix m(s.dim(), static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = s.vector(k);
  return m;
}

}  // namespace

double bmem_predict(const Vector& x, const BmemModel& model) {
  model.validate();
  require(x.size() == model.experts.dim(), "bmem_predict: dimension mismatch");
  const int K = model.num_experts();
  Vector g(K);
  for (int k = 0; k < K; ++k) g(k) = model.gates.vector(k).dot(x);
  const double lse = log_sum_exp(g);
  double p = 0.0;
  for (int k = 0; k < K; ++k) p += std::exp(g(k) - lse) * sigmoid(model.experts.vector(k).dot(x));
  return std::clamp(p, 0.0, 1.0);
}

double bmem_predict_average(const Vector& x, const std::vector<BmemModel>& samples) {
  require(!samples.empty(), "bmem_predict_average: no samples");
  CompensatedSum s;
  for (const auto& m : samples) s += bmem_predict(x, m);
  return s.value() / static_cast<double>(samples.size());
}

std::vector<double> bmem_predict_all(const Matrix& X, const BmemModel& model) {
  std::vector<double> out(X.rows());
  for (Eigen::Index n = 0; n < X.rows(); ++n) out[n] = bmem_predict(X.row(n).transpose(), model);
  return out;
}

std::vector<double> bmem_predict_all(const Matrix& X, const std::vector<BmemModel>& samples) {
  std::vector<double> out(X.rows());
  for (Eigen::Index n = 0; n < X.rows(); ++n) out[n] = bmem_predict_average(X.row(n).transpose(), samples);
  return out;
}

BmemHyper make_bmem_hyper(int dim, double kappa, double shape, double rate) {
  const MabnHyper h(UnitVector::axis(dim, 0), kappa, GammaParams(shape, rate));
  return {h, h};
}

BmemModel BmemVariationalState::plug_in_model() const {
  require(num_experts() >= 1, "plug_in_model: empty state");
  const int p = expert_factors.front().direction_mean.dim();
  BmemModel m{ComponentSet(p), ComponentSet(p)};
  for (int k = 0; k < num_experts(); ++k) {
    for (int chain = 0; chain < 2; ++chain) {
      const auto& f = chain == 0 ? expert_factors[k] : gate_factors[k];
      const double a = mean_resultant_length(p, f.direction_concentration);
      const double g = a * gamma_moments(f.magnitude).mean;
      (chain == 0 ? m.experts : m.gates).push_back(f.direction_mean, std::max(g, 1e-300));
    }
  }
  return m;
}

void BmemVariationalState::check_invariants() const {
  const int K = num_experts();
  require(K >= 1, "state: no components");
  require(static_cast<int>(gate_factors.size()) == K, "state: gate count differs");
  require(phi.cols() == K && d.cols() == K && e.cols() == K, "state: aux shapes");
  require(phi.rows() == c.size() && d.rows() == c.size() && e.rows() == c.size(), "state: aux rows");
  require(static_cast<int>(aux_expert.size()) == K - 1 && static_cast<int>(aux_gate.size()) == K - 1,
          "state: prior aux count");
  require(kappa_hat > 0.0, "state: kappa_hat must be positive");
  for (Eigen::Index n = 0; n < phi.rows(); ++n) {
    require(phi.row(n).minCoeff() >= 0.0, "state: negative assignment probability");
    require(std::abs(phi.row(n).sum() - 1.0) < 1e-9, "state: assignment row does not sum to one");
  }
  if (d.size()) require(d.minCoeff() > 0.0 && e.minCoeff() > 0.0, "state: logistic aux must be positive");
  for (const auto* fs : {&expert_factors, &gate_factors}) {
    for (const auto& f : *fs) {
      require(f.direction_concentration > 0.0 && f.magnitude.shape > 0.0 && f.magnitude.rate > 0.0,
              "state: factor parameters must be positive");
    }
  }
  for (const auto* ax : {&aux_expert, &aux_gate})
    for (const auto& a : *ax) require(a.xi > 0.0, "state: prior aux xi must be positive");
}

void ViConfig::validate() const {
  if (max_sweeps < 1) throw ConfigError("vi: max_sweeps must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("vi: tolerance must be positive");
  if (patience < 1) throw ConfigError("vi: patience must be >= 1");
  if (!(kappa_hat_init > 0.0)) throw ConfigError("vi: kappa_hat_init must be positive");
  if (direction_iterations < 0 || magnitude_iterations < 0) throw ConfigError("vi: iteration counts must be >= 0");
  if (restarts < 1) throw ConfigError("vi: restarts must be >= 1");
  if (lambda_expert < 0.0 || lambda_gate < 0.0) throw ConfigError("pr: lambdas must be >= 0");
  if (variance_weight < 0.0) throw ConfigError("pr: variance_weight must be >= 0");
}

// ---------------------------------------------------------------------------
// Mutual angular regularizer

AngleStats pairwise_angle_stats(const std::vector<Vector>& v) {
  require(v.size() >= 2, "pairwise_angle_stats: need at least two vectors");
  for (const auto& x : v) require(x.norm() > 0.0, "pairwise_angle_stats: zero vector");
  CompensatedSum s;
  CompensatedSum s2;
  std::size_t m = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (i == j) continue;
      const double t = nonobtuse_angle(v[i], v[j]);
      s += t;
      ++m;
    }
  const double mean = s.value() / static_cast<double>(m);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (i == j) continue;
      const double t = nonobtuse_angle(v[i], v[j]) - mean;
      s2 += t * t;
    }
  return {mean, s2.value() / static_cast<double>(m)};
}

double mutual_angular_regularizer(const std::vector<Vector>& v, double variance_weight) {
  require(variance_weight >= 0.0, "mutual_angular_regularizer: negative variance weight");
  const auto st = pairwise_angle_stats(v);
  return st.mean - variance_weight * st.variance;
}

std::vector<Vector> mutual_angular_gradient(const std::vector<Vector>& v, double variance_weight) {
  const auto st = pairwise_angle_stats(v);
  const std::size_t K = v.size();
  const double M = static_cast<double>(K * (K - 1));
  std::vector<Vector> grad(K, Vector::Zero(v.front().size()));
  std::vector<Vector> unit(K);
  std::vector<double> norms(K);
  for (std::size_t i = 0; i < K; ++i) {
    norms[i] = v[i].norm();
    unit[i] = v[i] / norms[i];
  }
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) {
      const double c = std::clamp(unit[i].dot(unit[j]), -1.0, 1.0);
      if (c == 0.0 || std::abs(c) >= 1.0) continue;
      const double theta = std::acos(std::abs(c));
      const double dw = (2.0 / M) * (1.0 - 2.0 * variance_weight * (theta - st.mean));
      const double dtheta_dc = -(c > 0 ? 1.0 : -1.0) / std::sqrt(1.0 - c * c);
      grad[i] += dw * dtheta_dc * (unit[j] - c * unit[i]) / norms[i];
      grad[j] += dw * dtheta_dc * (unit[i] - c * unit[j]) / norms[j];
    }
  return grad;
}

// ---------------------------------------------------------------------------
// Variational objective

namespace {

// Expectations under one chain of factors, per example and component.
struct ChainCache {
  std::vector<double> a;    // mean resultant length per factor
  std::vector<double> eg;   // E[g]
  std::vector<double> eg2;  // E[g^2]
  Matrix proj;              // x_n . direction mean
  Matrix eqf;               // E[(a~ . x_n)^2]
  Matrix mean;              // E[a . x_n]
  Matrix sq;                // E[(a . x_n)^2]
};

ChainCache build_cache(const std::vector<MabnVariationalFactor>& fs, const Matrix& X, const Vector& xx) {
  const int K = static_cast<int>(fs.size());
  const int p = fs.front().direction_mean.dim();
  const Eigen::Index N = X.rows();
  ChainCache c;
  c.a.resize(K);
  c.eg.resize(K);
  c.eg2.resize(K);
  c.proj.resize(N, K);
  c.eqf.resize(N, K);
  c.mean.resize(N, K);
  c.sq.resize(N, K);
  for (int k = 0; k < K; ++k) {
    const auto& f = fs[k];
    const double kh = f.direction_concentration;
    c.a[k] = mean_resultant_length(p, kh);
    const double r = f.magnitude.shape;
    const double s = f.magnitude.rate;
    c.eg[k] = r / s;
    c.eg2[k] = (r + r * r) / (s * s);
    if (N == 0) continue;
    c.proj.col(k) = X * f.direction_mean.coords();
    const double iso = kh < kUniformConcentration ? 1.0 / p : c.a[k] / kh;
    const double aniso = kh < kUniformConcentration ? 0.0 : 1.0 - p * c.a[k] / kh;
    c.eqf.col(k) = iso * xx.array() + aniso * c.proj.col(k).array().square();
    c.mean.col(k) = c.a[k] * c.eg[k] * c.proj.col(k);
    c.sq.col(k) = c.eg2[k] * c.eqf.col(k);
  }
  return c;
}

double label_sign(int y) { return y ? 1.0 : -1.0; }

double expert_bound(double mean, double sq, double ysgn, double e) {
  return -softplus(-e) + 0.5 * (ysgn * mean - e) + bouchard_lambda(e) * (sq - e * e);
}

// Lower bound on E[log softmax] contributions for example n minus the
// phi-weighted linear part (added separately).
double gate_bound(const ChainCache& g, Eigen::Index n, double c, const Matrix& d) {
  CompensatedSum s;
  s += -c;
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    const double m = g.mean(n, j);
    const double dj = d(n, j);
    s += -(softplus(-dj) + 0.5 * (m - c + dj) -
           bouchard_lambda(dj) * (g.sq(n, j) - 2.0 * c * m + c * c - dj * dj));
  }
  return s.value();
}

double independent_prior_term(const std::vector<MabnVariationalFactor>& fs, const MabnHyper& h) {
  const int p = h.dim();
  const double a1 = h.magnitude.shape;
  const double a2 = h.magnitude.rate;
  CompensatedSum s;
  for (const auto& f : fs) {
    s += h.concentration * mean_resultant_length(p, f.direction_concentration) *
         h.base_direction.dot(f.direction_mean.coords());
    s += a1 * std::log(a2) - std::lgamma(a1);
    const auto m = gamma_moments(f.magnitude);
    s += (a1 - 1.0) * m.mean_log - a2 * m.mean;
  }
  return s.value();
}

double data_term(const BmemVariationalState& st, const LabeledDataset& data, const ChainCache& ex,
                 const ChainCache& gt) {
  CompensatedSum total;
  const int K = st.num_experts();
  for (int n = 0; n < data.size(); ++n) {
    const double ys = label_sign(data.labels[n]);
    for (int k = 0; k < K; ++k) {
      const double ph = st.phi(n, k);
      if (ph > 0.0) {
        total += ph * (expert_bound(ex.mean(n, k), ex.sq(n, k), ys, st.e(n, k)) + gt.mean(n, k));
        total += -ph * std::log(ph);
      }
    }
    total += gate_bound(gt, n, st.c(n), st.d);
  }
  return total.value();
}

double angular_term(const std::vector<MabnVariationalFactor>& fs, double variance_weight) {
  if (fs.size() < 2) return 0.0;
  std::vector<Vector> v;
  for (const auto& f : fs) v.push_back(f.direction_mean.coords());
  return mutual_angular_regularizer(v, variance_weight);
}

struct ObjectiveSpec {
  PriorForm prior = PriorForm::Mabn;
  bool paper_area = false;
  double lambda_expert = 0.0;
  double lambda_gate = 0.0;
  double variance_weight = 1.0;
};

double objective(const BmemVariationalState& st, const LabeledDataset& data, const BmemHyper& hyper,
                 const ObjectiveSpec& spec) {
  const Vector xx = data.features.rowwise().squaredNorm();
  const auto ex = build_cache(st.expert_factors, data.features, xx);
  const auto gt = build_cache(st.gate_factors, data.features, xx);
  CompensatedSum total;
  total += data_term(st, data, ex, gt);
  if (spec.prior == PriorForm::Mabn) {
    total += mabn_elbo_prior_term(st.expert_factors, hyper.expert, st.aux_expert, spec.paper_area);
    total += mabn_elbo_prior_term(st.gate_factors, hyper.gate, st.aux_gate, spec.paper_area);
  } else {
    total += independent_prior_term(st.expert_factors, hyper.expert);
    total += independent_prior_term(st.gate_factors, hyper.gate);
  }
  total += -mabn_entropy_term(st.expert_factors, true);
  total += -mabn_entropy_term(st.gate_factors, true);
  if (spec.lambda_expert > 0.0) total += spec.lambda_expert * angular_term(st.expert_factors, spec.variance_weight);
  if (spec.lambda_gate > 0.0) total += spec.lambda_gate * angular_term(st.gate_factors, spec.variance_weight);
  return total.value();
}

}  // namespace

double bmem_elbo(const BmemVariationalState& state, const LabeledDataset& data, const BmemHyper& hyper,
                 PriorForm prior, bool paper_area) {
  state.check_invariants();
  require(state.phi.rows() == data.size(), "bmem_elbo: state and data differ in N");
  require(data.size() == 0 || data.dim() == hyper.expert.dim(), "bmem_elbo: dimension mismatch");
  ObjectiveSpec spec;
  spec.prior = prior;
  spec.paper_area = paper_area;
  return objective(state, data, hyper, spec);
}

double bmem_pr_objective(const BmemVariationalState& state, const LabeledDataset& data,
                         const BmemHyper& hyper, const ViConfig& config) {
  state.check_invariants();
  require(state.phi.rows() == data.size(), "bmem_pr_objective: state and data differ in N");
  ObjectiveSpec spec;
  spec.prior = PriorForm::Independent;
  spec.lambda_expert = config.lambda_expert;
  spec.lambda_gate = config.lambda_gate;
  spec.variance_weight = config.variance_weight;
  return objective(state, data, hyper, spec);
}

// ---------------------------------------------------------------------------
// Coordinate ascent

namespace {

// Maximizes f on the sphere by geodesic steps along the Riemannian gradient
// with backtracking. Only increases are accepted.
UnitVector sphere_ascent(UnitVector a, const std::function<double(const Vector&)>& f,
                         const std::function<Vector(const Vector&)>& grad, int iterations) {
  double fa = f(a.coords());
  double t0 = kPi / 8.0;
  for (int it = 0; it < iterations; ++it) {
    const Vector g = tangent_project(grad(a.coords()), a);
    const double gn = g.norm();
    if (!(gn > 1e-12)) break;
    const Vector dir = g / gn;
    double t = std::min(kPi / 4.0, 2.0 * t0);
    bool moved = false;
    for (int bt = 0; bt < 50; ++bt, t *= 0.5) {
      const Vector cand = std::cos(t) * a.coords() + std::sin(t) * dir;
      const double fc = f(cand / cand.norm());
      if (std::isfinite(fc) && fc > fa) {
        a = UnitVector::normalized(cand);
        fa = fc;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    t0 = t;
  }
  return a;
}

// F(r, s) for q(g) = Gamma(r, s) with data coefficients a (on E[g]) and b (on
// E[g^2]) and prior Gamma(a1, a2), entropy included.
double magnitude_objective(double r, double s, double a, double b, double a1, double a2) {
  const double ls = std::log(s);
  return (r / s) * (a - a2) + b * (r + r * r) / (s * s) + (a1 - r) * (digamma(r) - ls) - r * ls +
         std::lgamma(r) + r;
}

double best_rate(double r, double a, double b, double a1, double a2) {
  const double B = r * (a - a2);
  const double C = 2.0 * b * (r + r * r);
  const double disc = B * B - 4.0 * a1 * C;
  if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double root = std::sqrt(disc);
  // Numerically stable positive root of a1 s^2 + B s + C = 0.
  if (B <= 0.0) return (-B + root) / (2.0 * a1);
  if (C < 0.0) return -2.0 * C / (B + root);
  return std::numeric_limits<double>::quiet_NaN();
}

GammaParams update_magnitude(GammaParams q, double a, double b, const GammaParams& prior, int iterations) {
  const double a1 = prior.shape;
  const double a2 = prior.rate;
  double r = q.shape;
  double s = q.rate;
  double f = magnitude_objective(r, s, a, b, a1, a2);
  for (int it = 0; it < iterations; ++it) {
    const double s_new = best_rate(r, a, b, a1, a2);
    if (std::isfinite(s_new) && s_new > 0.0) {
      const double fn = magnitude_objective(r, s_new, a, b, a1, a2);
      if (fn > f) {
        s = s_new;
        f = fn;
      }
    }
    const double lo = std::max(std::log(r) - 4.0, std::log(1e-6));
    const double hi = std::min(std::log(r) + 4.0, std::log(1e12));
    const auto res = boost::math::tools::brent_find_minima(
        [&](double lr) {
          const double v = magnitude_objective(std::exp(lr), s, a, b, a1, a2);
          return std::isfinite(v) ? -v : std::numeric_limits<double>::max();
        },
        lo, hi, 40);
    const double r_new = std::exp(res.first);
    const double fn = magnitude_objective(r_new, s, a, b, a1, a2);
    if (fn > f) {
      r = r_new;
      f = fn;
    }
  }
  return GammaParams(r, s);
}

struct Fitter {
  const LabeledDataset& data;
  const BmemHyper& hyper;
  ViConfig cfg;
  ObjectiveSpec spec;
  Vector xx;
  BmemVariationalState st;
  int N = 0;
  int K = 0;
  int p = 0;

  Fitter(const LabeledDataset& d, const BmemHyper& h, const ViConfig& c, const ObjectiveSpec& sp)
      : data(d), hyper(h), cfg(c), spec(sp), N(d.size()), p(h.expert.dim()) {
    xx = data.features.rowwise().squaredNorm();
  }

  double value() const { return objective(st, data, hyper, spec); }

  void init(int k, Rng& rng) {
    K = k;
    const auto b = sample_mabn(K, hyper.expert, rng);
    const auto h = sample_mabn(K, hyper.gate, rng);
    st = BmemVariationalState{};
    st.kappa_hat = cfg.kappa_hat_init;
    for (int j = 0; j < K; ++j) {
      st.expert_factors.emplace_back(b.direction(j), st.kappa_hat, hyper.expert.magnitude);
      st.gate_factors.emplace_back(h.direction(j), st.kappa_hat, hyper.gate.magnitude);
    }
    st.phi = Matrix::Constant(N, K, 1.0 / K);
    st.c = Vector::Zero(N);
    st.d = Matrix::Ones(N, K);
    st.e = Matrix::Ones(N, K);
    st.aux_expert.assign(K - 1, BoundAuxParams{});
    st.aux_gate.assign(K - 1, BoundAuxParams{});
    update_expert_aux();
    update_gate_aux();
    update_prior_aux();
  }

  ChainCache experts() const { return build_cache(st.expert_factors, data.features, xx); }
  ChainCache gates() const { return build_cache(st.gate_factors, data.features, xx); }

  void update_expert_aux() {
    const auto ex = experts();
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) st.e(n, k) = std::max(std::sqrt(std::max(ex.sq(n, k), 0.0)), 1e-10);
  }

  void update_gate_aux() {
    const auto gt = gates();
    for (int n = 0; n < N; ++n) {
      for (int round = 0; round < 3; ++round) {
        double lam_sum = 0.0;
        double lam_m = 0.0;
        for (int j = 0; j < K; ++j) {
          const double l = bouchard_lambda(st.d(n, j));
          lam_sum += l;
          lam_m += l * gt.mean(n, j);
        }
        st.c(n) = (1.0 - 0.5 * K + 2.0 * lam_m) / (2.0 * lam_sum);
        for (int j = 0; j < K; ++j) {
          const double m = gt.mean(n, j);
          const double t2 = gt.sq(n, j) - 2.0 * st.c(n) * m + st.c(n) * st.c(n);
          st.d(n, j) = std::max(std::sqrt(std::max(t2, 0.0)), 1e-10);
        }
      }
    }
  }

  void update_assignments() {
    const auto ex = experts();
    const auto gt = gates();
    Vector logits(K);
    for (int n = 0; n < N; ++n) {
      const double ys = label_sign(data.labels[n]);
      for (int k = 0; k < K; ++k)
        logits(k) = expert_bound(ex.mean(n, k), ex.sq(n, k), ys, st.e(n, k)) + gt.mean(n, k);
      const double lse = log_sum_exp(logits);
      for (int k = 0; k < K; ++k) st.phi(n, k) = std::exp(logits(k) - lse);
      st.phi.row(n) /= st.phi.row(n).sum();
    }
  }

  void update_prior_aux() {
    if (spec.prior != PriorForm::Mabn) return;
    for (int chain = 0; chain < 2; ++chain) {
      auto& fs = chain == 0 ? st.expert_factors : st.gate_factors;
      auto& aux = chain == 0 ? st.aux_expert : st.aux_gate;
      const double kappa = chain == 0 ? hyper.expert.concentration : hyper.gate.concentration;
      for (int i = 1; i < K; ++i)
        aux[i - 1] = optimize_partition_aux(expected_sq_norm_of_sum(fs, i), kappa, p, aux[i - 1], spec.paper_area);
    }
  }

  void update_magnitudes() {
    {
      const auto ex = experts();
      for (int k = 0; k < K; ++k) {
        double a = 0.0;
        double b = 0.0;
        for (int n = 0; n < N; ++n) {
          const double ph = st.phi(n, k);
          a += ph * label_sign(data.labels[n]) * ex.a[k] * ex.proj(n, k) * 0.5;
          b += ph * bouchard_lambda(st.e(n, k)) * ex.eqf(n, k);
        }
        auto& f = st.expert_factors[k];
        f.magnitude = update_magnitude(f.magnitude, a, b, hyper.expert.magnitude, cfg.magnitude_iterations);
      }
    }
    const auto gt = gates();
    for (int k = 0; k < K; ++k) {
      double a = 0.0;
      double b = 0.0;
      for (int n = 0; n < N; ++n) {
        const double l = bouchard_lambda(st.d(n, k));
        a += (st.phi(n, k) - 0.5 - 2.0 * l * st.c(n)) * gt.a[k] * gt.proj(n, k);
        b += l * gt.eqf(n, k);
      }
      auto& f = st.gate_factors[k];
      f.magnitude = update_magnitude(f.magnitude, a, b, hyper.gate.magnitude, cfg.magnitude_iterations);
    }
  }

  // Linear coefficient of the prior (or its bound) on direction mean k.
  Vector prior_linear(int chain, int k) const {
    const auto& fs = chain == 0 ? st.expert_factors : st.gate_factors;
    const auto& h = chain == 0 ? hyper.expert : hyper.gate;
    const double kappa = h.concentration;
    std::vector<double> A(K);
    for (int j = 0; j < K; ++j) A[j] = mean_resultant_length(p, fs[j].direction_concentration);
    if (spec.prior == PriorForm::Independent) return kappa * A[k] * h.base_direction.coords();
    const auto& aux = chain == 0 ? st.aux_expert : st.aux_gate;
    Vector g = Vector::Zero(p);
    if (k == 0) g += kappa * A[0] * h.base_direction.coords();
    for (int j = 0; j < K; ++j)
      if (j != k) g -= kappa * A[k] * A[j] * fs[j].direction_mean.coords();
    Vector partial = Vector::Zero(p);  // sum_{j < i, j != k} A_j a_j
    for (int i = 1; i < K; ++i) {
      if (i - 1 != k) partial += A[i - 1] * fs[i - 1].direction_mean.coords();
      if (i > k) g -= 2.0 * log_partition_bound_slope(kappa, aux[i - 1], p, spec.paper_area) * A[k] * partial;
    }
    return g;
  }

  void update_directions(int chain) {
    auto& fs = chain == 0 ? st.expert_factors : st.gate_factors;
    const double lambda = chain == 0 ? spec.lambda_expert : spec.lambda_gate;
    for (int k = 0; k < K; ++k) {
      const auto cache = chain == 0 ? experts() : gates();
      const double A = cache.a[k];
      const double kh = fs[k].direction_concentration;
      const double aniso = kh < kUniformConcentration ? 0.0 : 1.0 - p * A / kh;
      Vector u = prior_linear(chain, k);
      Vector w(N);
      for (int n = 0; n < N; ++n) {
        if (chain == 0) {
          const double ph = st.phi(n, k);
          u += ph * label_sign(data.labels[n]) * A * cache.eg[k] * 0.5 * data.features.row(n).transpose();
          w(n) = ph * bouchard_lambda(st.e(n, k)) * cache.eg2[k] * aniso;
        } else {
          const double l = bouchard_lambda(st.d(n, k));
          u += (st.phi(n, k) - 0.5 - 2.0 * l * st.c(n)) * A * cache.eg[k] * data.features.row(n).transpose();
          w(n) = l * cache.eg2[k] * aniso;
        }
      }
      std::vector<Vector> others;
      for (int j = 0; j < K; ++j) others.push_back(fs[j].direction_mean.coords());
      const bool reg = lambda > 0.0 && K >= 2;
      const auto f = [&](const Vector& a) {
        double v = u.dot(a);
        if (N) v += w.dot((data.features * a).array().square().matrix());
        if (reg) {
          auto vs = others;
          vs[k] = a;
          v += lambda * mutual_angular_regularizer(vs, spec.variance_weight);
        }
        return v;
      };
      const auto grad = [&](const Vector& a) -> Vector {
        Vector g = u;
        if (N) g += 2.0 * data.features.transpose() * (w.array() * (data.features * a).array()).matrix();
        if (reg) {
          auto vs = others;
          vs[k] = a;
          g += lambda * mutual_angular_gradient(vs, spec.variance_weight)[k];
        }
        return g;
      };
      fs[k].direction_mean = sphere_ascent(fs[k].direction_mean, f, grad, cfg.direction_iterations);
    }
  }

  void set_kappa_hat(double kh) {
    st.kappa_hat = kh;
    for (auto& f : st.expert_factors) f.direction_concentration = kh;
    for (auto& f : st.gate_factors) f.direction_concentration = kh;
  }

  void update_kappa_hat() {
    const double k0 = st.kappa_hat;
    const double f0 = value();
    const double lo = std::max(std::log(k0) - 3.0, std::log(1e-3));
    const double hi = std::min(std::log(k0) + 3.0, std::log(1e7));
    const auto res = boost::math::tools::brent_find_minima(
        [&](double lk) {
          set_kappa_hat(std::exp(lk));
          const double v = value();
          return std::isfinite(v) ? -v : std::numeric_limits<double>::max();
        },
        lo, hi, 40);
    set_kappa_hat(std::exp(res.first));
    if (!(value() > f0)) set_kappa_hat(k0);
  }

  void sweep() {
    update_expert_aux();
    update_gate_aux();
    update_assignments();
    update_prior_aux();
    update_magnitudes();
    update_directions(0);
    update_directions(1);
    update_prior_aux();
    if (cfg.learn_kappa_hat) update_kappa_hat();
  }

  ViTrace run() {
    ViTrace tr;
    double prev = value();
    check_finite(prev, 0);
    tr.objective.push_back(prev);
    int calm = 0;
    for (int s = 1; s <= cfg.max_sweeps; ++s) {
      sweep();
      const double cur = value();
      check_finite(cur, s);
      tr.objective.push_back(cur);
      tr.sweeps = s;
      tr.max_decrease = std::max(tr.max_decrease, prev - cur);
      const double rel = std::abs(cur - prev) / std::max(1.0, std::abs(prev));
      calm = rel < cfg.tolerance ? calm + 1 : 0;
      prev = cur;
      if (calm >= cfg.patience) {
        tr.converged = true;
        break;
      }
    }
    st.check_invariants();
    return tr;
  }

  void check_finite(double v, int sweep_index) const {
    if (std::isfinite(v)) return;
    std::ostringstream os;
    os << "variational objective is not finite at sweep " << sweep_index << " (K=" << K
       << ", kappa_hat=" << st.kappa_hat << ")";
    for (int k = 0; k < K; ++k) {
      os << "; expert " << k << " r=" << st.expert_factors[k].magnitude.shape
         << " s=" << st.expert_factors[k].magnitude.rate << "; gate " << k
         << " r=" << st.gate_factors[k].magnitude.shape << " s=" << st.gate_factors[k].magnitude.rate;
    }
    throw NumericalError(os.str());
  }
};

ViResult fit(const LabeledDataset& data, int K, const BmemHyper& hyper, const ViConfig& config,
             const ObjectiveSpec& spec) {
  config.validate();
  data.validate();
  require(K >= 1, "vi: K must be >= 1");
  require(hyper.expert.dim() == hyper.gate.dim(), "vi: expert and gate hyper differ in dimension");
  require(data.size() == 0 || data.dim() == hyper.expert.dim(), "vi: data and hyper differ in dimension");
  ViResult best;
  bool have = false;
  for (int r = 0; r < config.restarts; ++r) {
    Fitter f(data, hyper, config, spec);
    Rng rng(config.seed + static_cast<std::uint64_t>(r));
    f.init(K, rng);
    auto tr = f.run();
    if (!have || tr.objective.back() > best.trace.objective.back()) {
      best = ViResult{std::move(f.st), std::move(tr)};
      have = true;
    }
  }
  return best;
}

}  // namespace

ViResult bmem_vi_fit(const LabeledDataset& data, int K, const BmemHyper& hyper, const ViConfig& config,
                     PriorForm prior) {
  ObjectiveSpec spec;
  spec.prior = prior;
  spec.paper_area = config.paper_area;
  return fit(data, K, hyper, config, spec);
}

ViResult bmem_pr_fit(const LabeledDataset& data, int K, const BmemHyper& hyper, double lambda1,
                     double lambda2, const ViConfig& config) {
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "pr: lambdas must be >= 0");
  ObjectiveSpec spec;
  spec.prior = PriorForm::Independent;
  spec.lambda_expert = lambda1;
  spec.lambda_gate = lambda2;
  spec.variance_weight = config.variance_weight;
  return fit(data, K, hyper, config, spec);
}

// ---------------------------------------------------------------------------
// Metropolis-Hastings

void MhConfig::validate() const {
  if (burn_in < 0) throw ConfigError("mh: burn_in must be >= 0");
  if (num_samples < 1) throw ConfigError("mh: num_samples must be >= 1");
  if (thin < 1) throw ConfigError("mh: thin must be >= 1");
  if (!(direction_kappa > 0.0)) throw ConfigError("mh: direction_kappa must be positive");
  if (!(magnitude_sigma > 0.0)) throw ConfigError("mh: magnitude_sigma must be positive");
  if (chains < 1) throw ConfigError("mh: chains must be >= 1");
  if (workers < 1) throw ConfigError("mh: workers must be >= 1");
}

double truncated_normal_log_hastings(double g, double g_new, double sigma) {
  require(sigma > 0.0 && g > 0.0 && g_new > 0.0, "truncated_normal_log_hastings: bad arguments");
  const boost::math::normal_distribution<double> z;
  // log Phi(g / sigma) - log Phi(g_new / sigma), with the upper tail for accuracy.
  const double lg = std::log1p(-boost::math::cdf(boost::math::complement(z, g / sigma)));
  const double ln = std::log1p(-boost::math::cdf(boost::math::complement(z, g_new / sigma)));
  return lg - ln;
}

double truncated_normal_sample(double mean, double sigma, Rng& rng) {
  require(sigma > 0.0, "truncated_normal_sample: sigma must be positive");
  const double a = -mean / sigma;  // standardized lower bound
  if (a < 1.0) {
    for (;;) {
      const double z = standard_normal(rng);
      if (z > a) return mean + sigma * z;
    }
  }
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(uniform01(rng)) / alpha;
    if (std::log(uniform01(rng)) <= -0.5 * (z - alpha) * (z - alpha)) return mean + sigma * z;
  }
}

namespace {

double loglik_from_predictors(const Matrix& F, const Matrix& G, const std::vector<int>& labels) {
  CompensatedSum s;
  const Eigen::Index K = F.cols();
  Vector t(K);
  Vector g(K);
  for (Eigen::Index n = 0; n < F.rows(); ++n) {
    const double ys = label_sign(labels[n]);
    g = G.row(n).transpose();
    const double lse = log_sum_exp(g);
    for (Eigen::Index k = 0; k < K; ++k) t(k) = g(k) - lse - softplus(-ys * F(n, k));
    s += log_sum_exp(t);
  }
  return s.value();
}

double prior_log_density(const BmemModel& m, const BmemHyper& h) {
  return mabn_log_density(m.experts, h.expert, MabnVariant::TypeI) +
         mabn_log_density(m.gates, h.gate, MabnVariant::TypeI);
}

struct ChainOutput {
  std::vector<BmemModel> samples;
  std::vector<double> log_target;
  long dir_acc = 0;
  long dir_tot = 0;
  long mag_acc = 0;
  long mag_tot = 0;
  double kappa = 0.0;
  double sigma = 0.0;
};

ChainOutput run_chain(const LabeledDataset& data, BmemModel model, const BmemHyper& hyper, const MhConfig& cfg,
                      std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  Rng rng(seq);
  const bool flat = cfg.flat_likelihood || data.size() == 0;
  const int K = model.num_experts();
  const Matrix& X = data.features;
  Matrix F = data.size() ? Matrix(X * component_matrix(model.experts)) : Matrix(0, K);
  Matrix G = data.size() ? Matrix(X * component_matrix(model.gates)) : Matrix(0, K);
  double loglik = flat ? 0.0 : loglik_from_predictors(F, G, data.labels);
  double logprior = prior_log_density(model, hyper);
  double kappa = cfg.direction_kappa;
  double sigma = cfg.magnitude_sigma;
  ChainOutput out;
  long wd_acc = 0, wd_tot = 0, wm_acc = 0, wm_tot = 0;

  const auto try_move = [&](int chain, int k, UnitVector dir, double mag, double log_hastings) {
    ComponentSet& set = chain == 0 ? model.experts : model.gates;
    Matrix& P = chain == 0 ? F : G;
    const UnitVector old_dir = set.direction(k);
    const double old_mag = set.magnitude(k);
    set.set_direction(k, std::move(dir));
    set.set_magnitude(k, mag);
    const double lp = prior_log_density(model, hyper);
    double ll = 0.0;
    Vector old_col;
    if (!flat) {
      old_col = P.col(k);
      P.col(k) = X * set.vector(k);
      ll = loglik_from_predictors(F, G, data.labels);
    }
    const double log_ratio = lp + ll - logprior - loglik + log_hastings;
    if (std::isfinite(log_ratio) && std::log(uniform01(rng)) < log_ratio) {
      logprior = lp;
      loglik = ll;
      return true;
    }
    set.set_direction(k, old_dir);
    set.set_magnitude(k, old_mag);
    if (!flat) P.col(k) = old_col;
    return false;
  };

  const long total = static_cast<long>(cfg.burn_in) + static_cast<long>(cfg.num_samples) * cfg.thin;
  for (long it = 0; it < total; ++it) {
    const bool burning = it < cfg.burn_in;
    for (int chain = 0; chain < 2; ++chain) {
      for (int k = 0; k < K; ++k) {
        const ComponentSet& set = chain == 0 ? model.experts : model.gates;
        const UnitVector prop = vmf_sample(VmfParams(set.direction(k), kappa), rng);
        const bool da = try_move(chain, k, prop, set.magnitude(k), 0.0);
        const double g = set.magnitude(k);
        const double g_new = truncated_normal_sample(g, sigma, rng);
        bool ma = false;
        if (g_new > 0.0) ma = try_move(chain, k, set.direction(k), g_new, truncated_normal_log_hastings(g, g_new, sigma));
        if (burning) {
          wd_acc += da;
          ++wd_tot;
          wm_acc += ma;
          ++wm_tot;
        } else {
          out.dir_acc += da;
          ++out.dir_tot;
          out.mag_acc += ma;
          ++out.mag_tot;
        }
      }
    }
    if (burning && cfg.adapt_during_burn_in && (it + 1) % 50 == 0) {
      const double rd = static_cast<double>(wd_acc) / static_cast<double>(std::max(1L, wd_tot));
      const double rm = static_cast<double>(wm_acc) / static_cast<double>(std::max(1L, wm_tot));
      if (rd > 0.45) kappa = std::max(kappa / 1.5, 1e-2);
      if (rd < 0.2) kappa = std::min(kappa * 1.5, 1e8);
      if (rm > 0.55) sigma = std::min(sigma * 1.5, 1e6);
      if (rm < 0.25) sigma = std::max(sigma / 1.5, 1e-8);
      wd_acc = wd_tot = wm_acc = wm_tot = 0;
    }
    if (!burning && (it - cfg.burn_in + 1) % cfg.thin == 0) {
      out.samples.push_back(model);
      out.log_target.push_back(logprior + loglik);
    }
  }
  out.kappa = kappa;
  out.sigma = sigma;
  return out;
}

}  // namespace

double bmem_log_likelihood(const BmemModel& model, const LabeledDataset& data) {
  model.validate();
  if (data.size() == 0) return 0.0;
  require(data.dim() == model.experts.dim(), "bmem_log_likelihood: dimension mismatch");
  const Matrix F = data.features * component_matrix(model.experts);
  const Matrix G = data.features * component_matrix(model.gates);
  return loglik_from_predictors(F, G, data.labels);
}

double bmem_log_target(const BmemModel& model, const LabeledDataset& data, const BmemHyper& hyper,
                       bool flat_likelihood) {
  const double lp = prior_log_density(model, hyper);
  return flat_likelihood ? lp : lp + bmem_log_likelihood(model, data);
}

MhResult bmem_mh_fit_from(const LabeledDataset& data, BmemModel init, const BmemHyper& hyper,
                          const MhConfig& config) {
  config.validate();
  data.validate();
  init.validate();
  require(init.experts.dim() == hyper.expert.dim(), "mh: model and hyper differ in dimension");
  require(data.size() == 0 || data.dim() == init.experts.dim(), "mh: data and model differ in dimension");
  std::vector<ChainOutput> outs(config.chains);
  const auto work = [&](int c) { outs[c] = run_chain(data, init, hyper, config, config.seed + 7919ULL * c); };
  const int W = std::min(config.workers, config.chains);
  if (W <= 1) {
    for (int c = 0; c < config.chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(W);
    for (int w = 0; w < W; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int c = w; c < config.chains; c += W) work(c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  MhResult res;
  long da = 0, dt = 0, ma = 0, mt = 0;
  for (auto& o : outs) {
    res.samples.insert(res.samples.end(), std::make_move_iterator(o.samples.begin()),
                       std::make_move_iterator(o.samples.end()));
    res.log_target.insert(res.log_target.end(), o.log_target.begin(), o.log_target.end());
    da += o.dir_acc;
    dt += o.dir_tot;
    ma += o.mag_acc;
    mt += o.mag_tot;
  }
  auto& dg = res.diagnostics;
  dg.direction_acceptance = static_cast<double>(da) / static_cast<double>(std::max(1L, dt));
  dg.magnitude_acceptance = static_cast<double>(ma) / static_cast<double>(std::max(1L, mt));
  dg.final_direction_kappa = outs.front().kappa;
  dg.final_magnitude_sigma = outs.front().sigma;
  for (const auto& [name, rate] : {std::pair<const char*, double>{"direction", dg.direction_acceptance},
                                   {"magnitude", dg.magnitude_acceptance}}) {
    if (rate < 0.05 || rate > 0.95) {
      std::ostringstream os;
      os << name << " acceptance rate " << rate << " is outside [0.05, 0.95] after burn-in";
      dg.warnings.push_back(os.str());
    }
  }
  return res;
}

MhResult bmem_mh_fit(const LabeledDataset& data, int K, const BmemHyper& hyper, const MhConfig& config) {
  require(K >= 1, "mh: K must be >= 1");
  Rng rng(config.seed ^ 0x5bd1e995ULL);
  BmemModel init{sample_mabn(K, hyper.expert, rng), sample_mabn(K, hyper.gate, rng)};
  return bmem_mh_fit_from(data, std::move(init), hyper, config);
}

// ---------------------------------------------------------------------------
// EM hyperparameter updates

GammaParams gamma_mle(double mean, double mean_log, const GammaParams& fallback) {
  if (!(mean > 0.0) || !std::isfinite(mean) || !std::isfinite(mean_log)) return fallback;
  const double c = std::log(mean) - mean_log;
  if (!(c > 1e-12)) return fallback;
  double a = (3.0 - c + std::sqrt((c - 3.0) * (c - 3.0) + 24.0 * c)) / (12.0 * c);
  for (int it = 0; it < 100; ++it) {
    const double f = std::log(a) - digamma(a) - c;
    const double fp = 1.0 / a - boost::math::trigamma(a);
    double next = a - f / fp;
    if (!(next > 0.0)) next = 0.5 * a;
    const bool done = std::abs(next - a) <= 1e-13 * a;
    a = next;
    if (done) break;
  }
  if (!(a > 0.0) || !std::isfinite(a)) return fallback;
  return GammaParams(a, a / mean);
}

MabnHyper em_hyper_update(const std::vector<ComponentSet>& samples, const MabnHyper& current) {
  require(!samples.empty(), "em_hyper_update: no samples");
  const int p = current.dim();
  Vector first = Vector::Zero(p);
  CompensatedSum sg;
  CompensatedSum slg;
  long count = 0;
  for (const auto& s : samples) {
    require(!s.empty() && s.dim() == p, "em_hyper_update: bad sample");
    first += s.direction(0).coords();
    for (std::size_t k = 0; k < s.size(); ++k) {
      sg += s.magnitude(k);
      slg += std::log(s.magnitude(k));
      ++count;
    }
  }
  const double n = static_cast<double>(count);
  const UnitVector mu = first.norm() > 1e-12 ? UnitVector::normalized(first) : current.base_direction;
  return MabnHyper(mu, current.concentration, gamma_mle(sg.value() / n, slg.value() / n, current.magnitude));
}

MabnHyper em_hyper_update(const std::vector<MabnVariationalFactor>& factors, const MabnHyper& current) {
  require(!factors.empty(), "em_hyper_update: no factors");
  const Vector first = factors.front().direction_mean.coords();
  CompensatedSum sg;
  CompensatedSum slg;
  for (const auto& f : factors) {
    const auto m = gamma_moments(f.magnitude);
    sg += m.mean;
    slg += m.mean_log;
  }
  const double n = static_cast<double>(factors.size());
  return MabnHyper(UnitVector::normalized(first), current.concentration,
                   gamma_mle(sg.value() / n, slg.value() / n, current.magnitude));
}

}  // namespace divbayes
