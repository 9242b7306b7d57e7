#include "divbayes/ghmc.hpp"
#include "divbayes/special.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace divbayes;

namespace {

TargetOnSphere vmf_target(const Vector& mu, double kappa) {
  return {[mu, kappa](const UnitVector& w) { return kappa * w.dot(mu); },
          [mu, kappa](const UnitVector&) -> Vector { return kappa * mu; }};
}

// A non-vMF smooth target: log p = a.w + (b.w)^2.
TargetOnSphere quartic_target(const Vector& a, const Vector& b) {
  return {[a, b](const UnitVector& w) {
            const double t = w.dot(b);
            return w.dot(a) + t * t;
          },
          [a, b](const UnitVector& w) -> Vector { return a + 2.0 * w.dot(b) * b; }};
}

}  // namespace

TEST_CASE("tangent_project") {
  const UnitVector w = UnitVector::axis(3, 0);
  const Vector u = (Vector(3) << 0.0, 2.0, -1.0).finished();
  CHECK(tangent_project(u, w) == u);
  CHECK(tangent_project(w.coords(), w).norm() < 1e-15);
  CHECK((tangent_project(w.coords() + u, w) - u).norm() < 1e-15);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto z = uniform_sphere_sample(7, rng);
    Vector v(7);
    for (auto& c : v) c = standard_normal(rng);
    CHECK(std::abs(z.dot(tangent_project(v, z))) < 1e-12);
  }
}

TEST_CASE("uniform target conserves energy exactly") {
  const TargetOnSphere flat{[](const UnitVector&) { return 0.0; },
                            [](const UnitVector& w) -> Vector { return Vector::Zero(w.dim()); }};
  Rng rng(2);
  UnitVector w = UnitVector::axis(5, 0);
  const GhmcConfig cfg{0.3, 15, false};
  for (int i = 0; i < 200; ++i) {
    const auto r = ghmc_step(w, flat, cfg, rng);
    CHECK(std::abs(r.delta_h) < 1e-12);
    CHECK(r.accepted);
    w = r.state;
  }
}

TEST_CASE("unit norm and tangency are preserved along long runs") {
  Rng rng(3);
  const Vector a = (Vector(4) << 1.0, -2.0, 0.5, 0.0).finished();
  const Vector b = (Vector(4) << 0.0, 1.0, 1.0, 1.0).finished();
  const auto tgt = quartic_target(a, b);
  UnitVector w = UnitVector::axis(4, 1);
  const GhmcConfig cfg{0.05, 10, false};
  for (int i = 0; i < 2000; ++i) {
    PhasePoint pt{w.coords(), tangent_project((Vector(4) << 0.3, 1.0, -0.4, 0.2).finished(), w)};
    REQUIRE(geodesic_leapfrog(pt, tgt, cfg, w.coords()));
    CHECK(std::abs(pt.position.norm() - 1.0) < 1e-12);
    CHECK(std::abs(pt.position.dot(pt.momentum)) < 1e-9);
    w = ghmc_step(w, tgt, cfg, rng).state;
  }
}

TEST_CASE("leapfrog is reversible") {
  const Vector a = (Vector(3) << 1.0, 2.0, -1.0).finished();
  const Vector b = (Vector(3) << 0.5, 0.0, 1.0).finished();
  const auto tgt = quartic_target(a, b);
  const GhmcConfig cfg{0.05, 25, false};
  const UnitVector w0 = UnitVector::normalized((Vector(3) << 0.3, -0.1, 0.9).finished());
  PhasePoint pt{w0.coords(), tangent_project((Vector(3) << 1.0, 0.2, 0.4).finished(), w0)};
  REQUIRE(geodesic_leapfrog(pt, tgt, cfg, w0.coords()));
  pt.momentum = -pt.momentum;
  REQUIRE(geodesic_leapfrog(pt, tgt, cfg, pt.position));
  CHECK((pt.position - w0.coords()).norm() < 1e-6);
}

TEST_CASE("energy error shrinks quadratically at fixed trajectory length") {
  const Vector a = (Vector(3) << 1.0, 2.0, -1.0).finished();
  const Vector b = (Vector(3) << 0.5, 0.0, 1.0).finished();
  const auto tgt = quartic_target(a, b);
  const UnitVector w0 = UnitVector::normalized((Vector(3) << 0.3, -0.1, 0.9).finished());
  const Vector v0 = tangent_project((Vector(3) << 1.0, 0.2, 0.4).finished(), w0);
  std::vector<double> le;
  std::vector<double> lh;
  for (double eps : {0.1, 0.05, 0.025, 0.0125}) {
    const int T = static_cast<int>(std::lround(0.5 / eps));
    PhasePoint pt{w0.coords(), v0};
    REQUIRE(geodesic_leapfrog(pt, tgt, GhmcConfig{eps, T, false}, w0.coords()));
    const double h0 = tgt.log_prob(w0) - 0.5 * v0.squaredNorm();
    const double h1 = tgt.log_prob(UnitVector::normalized(pt.position)) - 0.5 * pt.momentum.squaredNorm();
    le.push_back(std::log(eps));
    lh.push_back(std::log(std::abs(h1 - h0)));
  }
  const double mx = oracle::mean(le);
  const double my = oracle::mean(lh);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < le.size(); ++i) {
    sxy += (le[i] - mx) * (lh[i] - my);
    sxx += (le[i] - mx) * (le[i] - mx);
  }
  CHECK(sxy / sxx == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("vMF target: acceptance and moments") {
  const Vector mu = UnitVector::axis(3, 0).coords();
  const auto tgt = vmf_target(mu, 5.0);
  Rng rng(5);
  double prev_rate = 0.0;
  for (double eps : {0.5, 0.1, 0.01}) {
    UnitVector w = UnitVector::axis(3, 0);
    int acc = 0;
    for (int i = 0; i < 2000; ++i) {
      const auto r = ghmc_step(w, tgt, GhmcConfig{eps, 5, false}, rng);
      acc += r.accepted;
      w = r.state;
    }
    const double rate = acc / 2000.0;
    CHECK(rate >= prev_rate - 0.01);
    prev_rate = rate;
  }
  CHECK(prev_rate > 0.99);

  UnitVector w = UnitVector::axis(3, 1);
  Vector s = Vector::Zero(3);
  const int n = 40000;
  for (int i = 0; i < 500; ++i) w = ghmc_step(w, tgt, GhmcConfig{0.2, 8, false}, rng).state;
  for (int i = 0; i < n; ++i) {
    w = ghmc_step(w, tgt, GhmcConfig{0.2, 8, false}, rng).state;
    s += w.coords();
  }
  CHECK((s / n).norm() == doctest::Approx(mean_resultant_length(3, 5.0)).epsilon(0.01));
}

TEST_CASE("non-finite targets are rejected with a diagnostic") {
  const TargetOnSphere bad{[](const UnitVector& w) { return w.coords()(0) > 0.5 ? NAN : 0.0; },
                           [](const UnitVector& w) -> Vector { return Vector::Zero(w.dim()); }};
  Rng rng(6);
  const UnitVector w = UnitVector::axis(3, 0);
  const auto r = ghmc_step(w, bad, GhmcConfig{}, rng);
  CHECK(r.numerical_failure);
  CHECK_FALSE(r.accepted);
  CHECK(r.state.coords() == w.coords());
  CHECK_FALSE(r.diagnostic.empty());
  CHECK_THROWS_AS(ghmc_step(w, bad, GhmcConfig{0.0, 1, false}, rng), InvalidArgument);
}
