#include "divbayes/bmem.hpp"
#include "divbayes/special.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <boost/math/distributions/gamma.hpp>

#include <algorithm>

using namespace divbayes;

namespace {

double accuracy(const std::vector<double>& prob, const std::vector<int>& y) {
  int ok = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) ok += (prob[i] > 0.5) == (y[i] == 1);
  return static_cast<double>(ok) / static_cast<double>(prob.size());
}

BmemModel model_of(const std::vector<Vector>& experts, const std::vector<Vector>& gates) {
  const int p = static_cast<int>(experts.front().size());
  BmemModel m{ComponentSet(p), ComponentSet(p)};
  for (const auto& v : experts) m.experts.push_back(UnitVector::normalized(v), v.norm());
  for (const auto& v : gates) m.gates.push_back(UnitVector::normalized(v), v.norm());
  return m;
}

// A valid state with arbitrary (not optimized) parameters.
BmemVariationalState random_state(int N, int K, int p, Rng& rng) {
  BmemVariationalState st;
  std::uniform_real_distribution<double> u(0.5, 3.0);
  st.kappa_hat = 4.0 + 10.0 * uniform01(rng);
  for (int k = 0; k < K; ++k) {
    st.expert_factors.emplace_back(uniform_sphere_sample(p, rng), st.kappa_hat, GammaParams(u(rng), u(rng)));
    st.gate_factors.emplace_back(uniform_sphere_sample(p, rng), st.kappa_hat, GammaParams(u(rng), u(rng)));
  }
  st.phi = Matrix(N, K);
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) st.phi(n, k) = uniform01(rng);
    st.phi.row(n) /= st.phi.row(n).sum();
  }
  st.c = Vector(N);
  for (int n = 0; n < N; ++n) st.c(n) = standard_normal(rng);
  st.d = Matrix(N, K);
  st.e = Matrix(N, K);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      st.d(n, k) = u(rng);
      st.e(n, k) = u(rng);
    }
  for (int i = 1; i < K; ++i) {
    st.aux_expert.push_back({standard_normal(rng), u(rng)});
    st.aux_gate.push_back({standard_normal(rng), u(rng)});
  }
  return st;
}

}  // namespace

TEST_CASE("bmem_predict examples") {
  const Vector x = (Vector(3) << 0.3, -1.2, 0.7).finished();
  const Vector b = (Vector(3) << 1.0, 0.5, -2.0).finished();
  const Vector h = (Vector(3) << 0.2, 0.2, 0.2).finished();
  CHECK(bmem_predict(x, model_of({b}, {h})) == doctest::Approx(1.0 / (1.0 + std::exp(-b.dot(x)))).epsilon(1e-14));

  // Gates with equal scores at x, antipodal experts.
  const Vector g1 = (Vector(3) << 1.0, 1.0, 0.0).finished();
  const Vector x2 = (Vector(3) << 0.0, 0.0, 2.0).finished();
  CHECK(bmem_predict(x2, model_of({b, -b}, {g1, (Vector(3) << -1.0, 2.0, 0.0).finished()})) ==
        doctest::Approx(0.5).epsilon(1e-14));

  BmemModel empty{ComponentSet(3), ComponentSet(3)};
  CHECK_THROWS_AS(bmem_predict(x, empty), InvalidArgument);
}

TEST_CASE("mutual angular regularizer examples") {
  const Vector e1 = (Vector(3) << 1, 0, 0).finished();
  const Vector e2 = (Vector(3) << 0, 1, 0).finished();
  const Vector e3 = (Vector(3) << 0, 0, 1).finished();
  CHECK(mutual_angular_regularizer({e1, e2}, 3.0) == doctest::Approx(kPi / 2));
  CHECK(mutual_angular_regularizer({e1, e2, e3}, 1.0) == doctest::Approx(kPi / 2));

  // Brute force over ordered pairs.
  const std::vector<Vector> v{e1, e2, (e1 + e2) / std::sqrt(2.0)};
  std::vector<double> th;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) th.push_back(std::acos(std::abs(v[i].dot(v[j]))));
  const double m = oracle::mean(th);
  double var = 0.0;
  for (double t : th) var += (t - m) * (t - m);
  var /= th.size();
  CHECK(mutual_angular_regularizer(v, 1.0) == doctest::Approx(m - var).epsilon(1e-14));
  CHECK(mutual_angular_regularizer(v, 1.0) == doctest::Approx(0.9101197).epsilon(1e-6));

  CHECK_THROWS_AS(mutual_angular_regularizer({e1}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(mutual_angular_regularizer({e1, Vector::Zero(3)}, 1.0), InvalidArgument);
}

TEST_CASE("mutual angular regularizer is scale invariant and its gradient matches finite differences") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Vector> v;
    for (int k = 0; k < 4; ++k) {
      Vector x(5);
      for (auto& c : x) c = standard_normal(rng);
      v.push_back(x);
    }
    const double base = mutual_angular_regularizer(v, 0.7);
    auto scaled = v;
    scaled[2] *= -3.5;
    CHECK(mutual_angular_regularizer(scaled, 0.7) == doctest::Approx(base).epsilon(1e-12));

    const auto g = mutual_angular_gradient(v, 0.7);
    for (int k = 0; k < 4; ++k)
      for (int i = 0; i < 5; ++i) {
        const double h = 1e-6;
        auto a = v;
        auto b = v;
        a[k](i) += h;
        b[k](i) -= h;
        const double fd = (mutual_angular_regularizer(a, 0.7) - mutual_angular_regularizer(b, 0.7)) / (2 * h);
        CHECK(g[k](i) == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
      }
  }
  const Vector e1 = (Vector(2) << 1, 0).finished();
  const auto g = mutual_angular_gradient({e1, e1, (Vector(2) << 0, 1).finished()}, 1.0);
  CHECK(g[0].norm() == 0.0);
}

TEST_CASE("ELBO with no data is prior minus entropy") {
  Rng rng(1);
  const auto hyper = make_bmem_hyper(3, 2.0, 2.0, 1.0);
  const auto st = random_state(0, 3, 3, rng);
  LabeledDataset empty;
  empty.features = Matrix(0, 3);
  const double expect = mabn_elbo_prior_term(st.expert_factors, hyper.expert, st.aux_expert) +
                        mabn_elbo_prior_term(st.gate_factors, hyper.gate, st.aux_gate) -
                        mabn_entropy_term(st.expert_factors, true) - mabn_entropy_term(st.gate_factors, true);
  CHECK(bmem_elbo(st, empty, hyper) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("ELBO with one example and one component collapses to the bound formulas") {
  Rng rng(2);
  const auto hyper = make_bmem_hyper(3, 2.0, 2.0, 1.0);
  const auto st = random_state(1, 1, 3, rng);
  LabeledDataset d;
  d.features = (Matrix(1, 3) << 0.4, -1.0, 0.3).finished();
  d.labels = {0};
  const Vector x = d.features.row(0).transpose();
  const auto& fb = st.expert_factors[0];
  const auto& fh = st.gate_factors[0];
  const int p = 3;
  const double A = mean_resultant_length(p, st.kappa_hat);
  const double gb = gamma_moments(fb.magnitude).mean;
  const double gb2 = fb.magnitude.shape * (fb.magnitude.shape + 1) / std::pow(fb.magnitude.rate, 2);
  const double gh = gamma_moments(fh.magnitude).mean;
  const double gh2 = fh.magnitude.shape * (fh.magnitude.shape + 1) / std::pow(fh.magnitude.rate, 2);
  // Expected log sigmoid((2y-1) beta.x) lower bound = -E[logistic upper bound].
  const double mb = -A * gb * fb.direction_mean.dot(x);
  const double sb = gb2 * expected_quadratic_form(x, fb);
  const double xi = st.e(0, 0);
  const double lam = bouchard_lambda(xi);
  const double expert = -(softplus(-xi) - 0.5 * (mb - xi) - lam * (sb - xi * xi));
  // Softmax over a single class: m - bound(log(exp(m))).
  const double m = A * gh * fh.direction_mean.dot(x);
  const double s2 = gh2 * expected_quadratic_form(x, fh);
  const double c = st.c(0);
  const double dd = st.d(0, 0);
  const double lse_bound =
      c + softplus(-dd) + 0.5 * (m - c + dd) - bouchard_lambda(dd) * (s2 - 2 * c * m + c * c - dd * dd);
  const double gate = m - lse_bound;
  const double prior = mabn_elbo_prior_term(st.expert_factors, hyper.expert, {}) +
                       mabn_elbo_prior_term(st.gate_factors, hyper.gate, {});
  const double ent = mabn_entropy_term(st.expert_factors, true) + mabn_entropy_term(st.gate_factors, true);
  CHECK(bmem_elbo(st, d, hyper) == doctest::Approx(expert + gate + prior - ent).epsilon(1e-12));
}

TEST_CASE("ELBO lies below a Monte Carlo estimate of the exact objective") {
  Rng rng(10);
  const int N = 5, K = 2, p = 3;
  const auto hyper = make_bmem_hyper(p, 1.5, 2.0, 1.0);
  LabeledDataset d;
  d.features = Matrix(N, p);
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < p; ++i) d.features(n, i) = standard_normal(rng);
    d.labels.push_back(n % 2);
  }
  for (int rep = 0; rep < 3; ++rep) {
    const auto st = random_state(N, K, p, rng);
    const double elbo = bmem_elbo(st, d, hyper) + 2.0 * log_vmf_normalizer(p, hyper.expert.concentration);
    std::vector<double> draws;
    for (int s = 0; s < 20000; ++s) {
      ComponentSet B(p);
      ComponentSet H(p);
      double logq = 0.0;
      for (int k = 0; k < K; ++k) {
        for (int chain = 0; chain < 2; ++chain) {
          const auto& f = chain == 0 ? st.expert_factors[k] : st.gate_factors[k];
          const VmfParams vp(f.direction_mean, f.direction_concentration);
          const auto dir = vmf_sample(vp, rng);
          const double g = gamma_sample(f.magnitude, rng);
          logq += vmf_log_density(dir, vp) + gamma_log_density(g, f.magnitude);
          (chain == 0 ? B : H).push_back(dir, g);
        }
      }
      double v = mabn_log_density(B, hyper.expert, MabnVariant::TypeII) +
                 mabn_log_density(H, hyper.gate, MabnVariant::TypeII) - logq;
      for (int n = 0; n < N; ++n) {
        const Vector x = d.features.row(n).transpose();
        const double ys = d.labels[n] ? 1.0 : -1.0;
        Vector gl(K);
        for (int k = 0; k < K; ++k) gl(k) = H.vector(k).dot(x);
        const double lse = gl.maxCoeff() + std::log((gl.array() - gl.maxCoeff()).exp().sum());
        for (int k = 0; k < K; ++k) {
          const double ph = st.phi(n, k);
          v += ph * (gl(k) - lse - softplus(-ys * B.vector(k).dot(x)) - std::log(ph));
        }
      }
      draws.push_back(v);
    }
    const double mc = oracle::mean(draws);
    const double se = std::sqrt(oracle::variance(draws) / draws.size());
    CHECK(elbo <= mc + 3.0 * se);
  }
}

TEST_CASE("VI and PR traces are nondecreasing and states stay valid") {
  for (int rep = 0; rep < 4; ++rep) {
    const auto data = rep % 2 ? generate_xor_experts(120, 100 + rep, 0.0) : generate_separable(120, 4, 100 + rep, 0.0);
    const int K = 2 + rep % 2;
    const auto hyper = make_bmem_hyper(data.dim(), 1.0 + rep, 2.0, 0.5);
    ViConfig cfg;
    cfg.max_sweeps = 40;
    cfg.seed = 7 + rep;
    const auto vi = bmem_vi_fit(data, K, hyper, cfg);
    CHECK(vi.trace.max_decrease <= 1e-8);
    CHECK(vi.trace.objective.size() == static_cast<std::size_t>(vi.trace.sweeps + 1));
    vi.state.check_invariants();
    CHECK(bmem_elbo(vi.state, data, hyper) == doctest::Approx(vi.trace.objective.back()).epsilon(1e-12));

    const auto pr = bmem_pr_fit(data, K, hyper, 2.0, 1.0, cfg);
    CHECK(pr.trace.max_decrease <= 1e-8);
    pr.state.check_invariants();
    ViConfig with = cfg;
    with.lambda_expert = 2.0;
    with.lambda_gate = 1.0;
    CHECK(bmem_pr_objective(pr.state, data, hyper, with) == doctest::Approx(pr.trace.objective.back()).epsilon(1e-12));
  }
}

TEST_CASE("VI with one expert separates separable data") {
  const auto data = generate_separable(300, 5, 21, 0.05);
  const auto hyper = make_bmem_hyper(5, 1.0, 2.0, 0.2);
  ViConfig cfg;
  cfg.max_sweeps = 100;
  const auto r = bmem_vi_fit(data, 1, hyper, cfg);
  CHECK(accuracy(bmem_predict_all(data.features, r.state.plug_in_model()), data.labels) >= 0.99);
}

TEST_CASE("VI recovers planted gates") {
  std::vector<int> truth;
  const auto train = generate_xor_experts(600, 1, 0.05, &truth);
  const auto test = generate_xor_experts(1000, 2, 0.05);
  const auto hyper = make_bmem_hyper(2, 1.0, 2.0, 0.2);
  ViConfig cfg;
  cfg.max_sweeps = 150;
  const auto r = bmem_vi_fit(train, 2, hyper, cfg);
  int agree = 0;
  for (int n = 0; n < train.size(); ++n) agree += (r.state.phi(n, 0) > 0.5 ? 0 : 1) == truth[n];
  const double a = static_cast<double>(agree) / train.size();
  CHECK(std::max(a, 1.0 - a) >= 0.9);
  CHECK(accuracy(bmem_predict_all(test.features, r.state.plug_in_model()), test.labels) >= 0.95);
}

TEST_CASE("PR without regularization matches VI under the independent prior") {
  const auto data = generate_xor_experts(150, 5, 0.05);
  const auto hyper = make_bmem_hyper(2, 2.0, 2.0, 0.5);
  ViConfig cfg;
  cfg.max_sweeps = 30;
  const auto a = bmem_pr_fit(data, 2, hyper, 0.0, 0.0, cfg);
  const auto b = bmem_vi_fit(data, 2, hyper, cfg, PriorForm::Independent);
  REQUIRE(a.trace.objective.size() == b.trace.objective.size());
  for (std::size_t i = 0; i < a.trace.objective.size(); ++i)
    CHECK(a.trace.objective[i] == doctest::Approx(b.trace.objective[i]).epsilon(1e-12));
  for (int k = 0; k < 2; ++k)
    CHECK((a.state.expert_factors[k].direction_mean.coords() - b.state.expert_factors[k].direction_mean.coords())
              .norm() < 1e-12);
}

TEST_CASE("strong angular regularization spreads the expert directions") {
  const auto data = generate_separable(200, 6, 8, 0.1);
  const auto hyper = make_bmem_hyper(6, 0.5, 2.0, 0.5);
  ViConfig cfg;
  cfg.max_sweeps = 40;
  const auto angle = [](const ViResult& r) {
    std::vector<Vector> v;
    for (const auto& f : r.state.expert_factors) v.push_back(f.direction_mean.coords());
    return pairwise_angle_stats(v).mean;
  };
  const auto off = bmem_pr_fit(data, 4, hyper, 0.0, 0.0, cfg);
  const auto on = bmem_pr_fit(data, 4, hyper, 200.0, 0.0, cfg);
  CHECK(angle(on) > angle(off));
}

TEST_CASE("truncated normal proposal and its Hastings factor") {
  Rng rng(4);
  for (double mean : {2.0, 0.1, -3.0}) {
    const double sigma = 0.7;
    std::vector<double> xs;
    for (int i = 0; i < 20000; ++i) xs.push_back(truncated_normal_sample(mean, sigma, rng));
    CHECK(*std::min_element(xs.begin(), xs.end()) > 0.0);
    const double mass = 1.0 - oracle::normal_cdf(-mean / sigma);
    const auto cdf = [&](double x) {
      return (oracle::normal_cdf((x - mean) / sigma) - oracle::normal_cdf(-mean / sigma)) / mass;
    };
    CHECK(oracle::ks_one_sample(xs, cdf) > 0.01);
  }
  // log q(g | g') - log q(g' | g) with q the positive-truncated normal density.
  const auto logq = [](double to, double from, double s) {
    return -0.5 * std::pow((to - from) / s, 2) - std::log(s * std::sqrt(2 * kPi)) -
           std::log(oracle::normal_cdf(from / s));
  };
  for (auto [g, gn, s] : {std::tuple{1.0, 0.2, 0.5}, {0.05, 3.0, 1.0}, {2.0, 2.5, 0.1}}) {
    CHECK(truncated_normal_log_hastings(g, gn, s) == doctest::Approx(logq(g, gn, s) - logq(gn, g, s)).epsilon(1e-10));
  }
}

TEST_CASE("vMF random-walk proposal is symmetric") {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto a = uniform_sphere_sample(4, rng);
    const auto b = uniform_sphere_sample(4, rng);
    CHECK(vmf_log_density(a, VmfParams(b, 30.0)) == doctest::Approx(vmf_log_density(b, VmfParams(a, 30.0))).epsilon(1e-14));
  }
}

TEST_CASE("log target and likelihood agree with direct evaluation") {
  Rng rng(6);
  const auto data = generate_xor_experts(40, 3, 0.0);
  const auto hyper = make_bmem_hyper(2, 2.0, 2.0, 1.0);
  const BmemModel m{sample_mabn(3, hyper.expert, rng), sample_mabn(3, hyper.gate, rng)};
  double ll = 0.0;
  for (int n = 0; n < data.size(); ++n) {
    const double pr = bmem_predict(data.features.row(n).transpose(), m);
    ll += std::log(data.labels[n] ? pr : 1.0 - pr);
  }
  CHECK(bmem_log_likelihood(m, data) == doctest::Approx(ll).epsilon(1e-10));
  CHECK(bmem_log_target(m, data, hyper, true) ==
        doctest::Approx(mabn_log_density(m.experts, hyper.expert, MabnVariant::TypeI) +
                        mabn_log_density(m.gates, hyper.gate, MabnVariant::TypeI)));
}

TEST_CASE("MH with a flat likelihood recovers the prior") {
  const auto hyper = make_bmem_hyper(3, 2.0, 3.0, 2.0);
  LabeledDataset empty;
  empty.features = Matrix(0, 3);
  MhConfig cfg;
  cfg.burn_in = 500;
  cfg.num_samples = 2000;
  cfg.thin = 10;
  cfg.seed = 11;
  const auto r = bmem_mh_fit(empty, 3, hyper, cfg);
  REQUIRE(r.samples.size() == 2000);
  CHECK(r.diagnostics.warnings.empty());
  std::vector<double> g;
  for (const auto& m : r.samples) g.push_back(m.experts.magnitude(1));
  const boost::math::gamma_distribution<double> ref(3.0, 0.5);
  CHECK(oracle::ks_one_sample(g, [&](double x) { return boost::math::cdf(ref, x); }) > 0.01);

  Rng rng(12);
  std::vector<double> a;
  std::vector<double> b;
  for (const auto& m : r.samples) a.push_back(m.gates.direction(0).dot(m.gates.direction(1).coords()));
  for (int i = 0; i < 2000; ++i) {
    const auto s = sample_mabn(3, hyper.gate, rng);
    b.push_back(s.direction(0).dot(s.direction(1).coords()));
  }
  CHECK(oracle::ks_two_sample(a, b) > 0.01);
}

TEST_CASE("MH chains are reproducible and independent of worker count") {
  const auto data = generate_xor_experts(60, 3, 0.05);
  const auto hyper = make_bmem_hyper(2, 1.0, 2.0, 0.5);
  MhConfig cfg;
  cfg.burn_in = 50;
  cfg.num_samples = 20;
  cfg.chains = 3;
  const auto a = bmem_mh_fit(data, 2, hyper, cfg);
  cfg.workers = 3;
  const auto b = bmem_mh_fit(data, 2, hyper, cfg);
  REQUIRE(a.samples.size() == 60);
  CHECK(a.log_target == b.log_target);
}

TEST_CASE("MH warns on extreme acceptance") {
  const auto data = generate_xor_experts(60, 3, 0.05);
  const auto hyper = make_bmem_hyper(2, 1.0, 2.0, 0.5);
  MhConfig cfg;
  cfg.burn_in = 10;
  cfg.num_samples = 50;
  cfg.thin = 1;
  cfg.adapt_during_burn_in = false;
  cfg.direction_kappa = 1e9;
  cfg.magnitude_sigma = 1e-9;
  const auto r = bmem_mh_fit(data, 2, hyper, cfg);
  CHECK(r.diagnostics.warnings.size() == 2);
}

TEST_CASE("gamma MLE and the EM hyper update") {
  Rng rng(9);
  const GammaParams truth(3.0, 2.0);
  ComponentSet s(3);
  for (int i = 0; i < 10000; ++i) s.push_back(uniform_sphere_sample(3, rng), gamma_sample(truth, rng));
  const MabnHyper start(UnitVector::axis(3, 0), 2.0, GammaParams(1.0, 1.0));
  const auto h = em_hyper_update(std::vector<ComponentSet>{s}, start);
  CHECK(h.magnitude.shape == doctest::Approx(3.0).epsilon(0.05));
  CHECK(h.magnitude.rate == doctest::Approx(2.0).epsilon(0.05));
  CHECK(h.concentration == 2.0);

  // M-step contract on the held statistics.
  double m = 0.0;
  double l = 0.0;
  for (double g : s.magnitudes()) {
    m += g;
    l += std::log(g);
  }
  m /= s.size();
  l /= s.size();
  const auto ell = [&](const GammaParams& q) {
    return q.shape * std::log(q.rate) - std::lgamma(q.shape) + (q.shape - 1) * l - q.rate * m;
  };
  CHECK(ell(h.magnitude) >= ell(start.magnitude));
  CHECK(ell(h.magnitude) >= ell(GammaParams(h.magnitude.shape * 1.01, h.magnitude.rate * 1.01)));

  const GammaParams fb(1.5, 1.5);
  const auto same = gamma_mle(2.0, std::log(2.0), fb);
  CHECK(same.shape == fb.shape);
  CHECK(same.rate == fb.rate);

  const UnitVector u = UnitVector::normalized((Vector(3) << 1.0, 2.0, -2.0).finished());
  std::vector<MabnVariationalFactor> fs{MabnVariationalFactor(u, 7.0, GammaParams(2.0, 1.0))};
  const auto h2 = em_hyper_update(fs, start);
  CHECK((h2.base_direction.coords() - u.coords()).norm() < 1e-14);
  CHECK(h2.magnitude.shape == doctest::Approx(2.0).epsilon(1e-8));
}
