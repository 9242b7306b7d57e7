#include "divbayes/mabn.hpp"

#include "divbayes/special.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace divbayes {

MabnHyper::MabnHyper(UnitVector base, double kappa, GammaParams mag)
    : base_direction(std::move(base)), concentration(kappa), magnitude(mag) {
  require(kappa >= 0.0 && std::isfinite(kappa), "MabnHyper: concentration must be >= 0");
}

ComponentSet::ComponentSet(int dim) : dim_(dim) {
  require(dim >= 2, "ComponentSet: dimension must be >= 2");
}

void ComponentSet::push_back(UnitVector direction, double magnitude) {
  if (dim_ == 0) dim_ = direction.dim();
  require(direction.dim() == dim_, "ComponentSet: dimension mismatch");
  require(magnitude > 0.0 && std::isfinite(magnitude), "ComponentSet: magnitude must be positive");
  directions_.push_back(std::move(direction));
  magnitudes_.push_back(magnitude);
}

void ComponentSet::pop_back() {
  require(!empty(), "ComponentSet: pop_back on empty set");
  directions_.pop_back();
  magnitudes_.pop_back();
}

void ComponentSet::truncate(std::size_t k) {
  while (size() > k) pop_back();
}

void ComponentSet::set_direction(std::size_t k, UnitVector d) {
  require(d.dim() == dim_, "ComponentSet: dimension mismatch");
  directions_.at(k) = std::move(d);
}

void ComponentSet::set_magnitude(std::size_t k, double g) {
  require(g > 0.0 && std::isfinite(g), "ComponentSet: magnitude must be positive");
  magnitudes_.at(k) = g;
}

Vector ComponentSet::direction_prefix_sum(std::size_t k) const {
  Vector s = Vector::Zero(dim_);
  for (std::size_t j = 0; j < k && j < size(); ++j) s += directions_[j].coords();
  return s;
}

void write_component_set(std::ostream& os, const ComponentSet& set) {
  char buf[40];
  os << "divbayes-components 1\n" << set.dim() << ' ' << set.size() << '\n';
  for (std::size_t k = 0; k < set.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", set.magnitude(k));
    os << buf;
    const Vector& c = set.direction(k).coords();
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", c(i));
      os << ' ' << buf;
    }
    os << '\n';
  }
}

namespace {

double parse_double(const std::string& tok) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw DataError("component set: bad number '" + tok + "'");
  }
  if (used != tok.size()) throw DataError("component set: bad number '" + tok + "'");
  return v;
}

}  // namespace

ComponentSet read_component_set(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "divbayes-components" || version != 1) {
    throw DataError("component set: missing or unsupported header");
  }
  long p = 0;
  long K = 0;
  if (!(is >> p >> K) || p < 2 || K < 0) throw DataError("component set: bad shape line");
  ComponentSet set(static_cast<int>(p));
  for (long k = 0; k < K; ++k) {
    std::string tok;
    if (!(is >> tok)) throw DataError("component set: truncated file");
    const double g = parse_double(tok);
    Vector c(p);
    for (long i = 0; i < p; ++i) {
      if (!(is >> tok)) throw DataError("component set: truncated file");
      c(i) = parse_double(tok);
    }
    try {
      set.push_back(UnitVector(std::move(c)), g);
    } catch (const InvalidArgument& e) {
      throw DataError(std::string("component set: ") + e.what());
    }
  }
  return set;
}

double local_log_prob_from_sum(const UnitVector& direction, const Vector& parent_sum,
                               double kappa, MabnVariant variant) {
  require(direction.dim() == parent_sum.size(), "local_log_prob: dimension mismatch");
  require(kappa >= 0.0, "local_log_prob: negative concentration");
  const int p = direction.dim();
  const double norm = parent_sum.norm();
  if (norm < kDegenerateParentSum) return log_vmf_normalizer(p, 0.0);
  const double dot = -parent_sum.dot(direction.coords());
  if (variant == MabnVariant::TypeI) {
    return log_vmf_normalizer(p, kappa) + kappa * dot / norm;
  }
  return log_vmf_normalizer(p, kappa * norm) + kappa * dot;
}

double local_log_prob(const UnitVector& direction, const std::vector<UnitVector>& parents,
                      double kappa, MabnVariant variant) {
  require(!parents.empty(), "local_log_prob: no parents");
  Vector s = Vector::Zero(direction.dim());
  for (const auto& u : parents) {
    require(u.dim() == direction.dim(), "local_log_prob: dimension mismatch");
    s += u.coords();
  }
  return local_log_prob_from_sum(direction, s, kappa, variant);
}

double mabn_direction_log_density(const ComponentSet& set, const MabnHyper& hyper,
                                  MabnVariant variant) {
  require(!set.empty(), "mabn_log_density: empty component set");
  require(set.dim() == hyper.dim(), "mabn_log_density: dimension mismatch");
  const int p = set.dim();
  const double kappa = hyper.concentration;
  CompensatedSum total;
  total += log_vmf_normalizer(p, kappa) +
           (kappa < kUniformConcentration ? 0.0
                                          : kappa * hyper.base_direction.dot(set.direction(0).coords()));
  Vector s = set.direction(0).coords();
  for (std::size_t i = 1; i < set.size(); ++i) {
    total += local_log_prob_from_sum(set.direction(i), s, kappa, variant);
    s += set.direction(i).coords();
  }
  return total.value();
}

double mabn_log_density(const ComponentSet& set, const MabnHyper& hyper, MabnVariant variant) {
  CompensatedSum total;
  total += mabn_direction_log_density(set, hyper, variant);
  for (std::size_t i = 0; i < set.size(); ++i) {
    total += gamma_log_density(set.magnitude(i), hyper.magnitude);
  }
  return total.value();
}

UnitVector draw_local_direction(const Vector& parent_sum, const MabnHyper& hyper, Rng& rng) {
  const int p = hyper.dim();
  if (hyper.concentration < kUniformConcentration) return uniform_sphere_sample(p, rng);
  const double norm = parent_sum.norm();
  if (norm < kDegenerateParentSum) return uniform_sphere_sample(p, rng);
  return vmf_sample(VmfParams(UnitVector::normalized(-parent_sum), hyper.concentration), rng);
}

std::pair<UnitVector, double> ima_next_component(const ComponentSet& existing,
                                                 const MabnHyper& hyper, Rng& rng) {
  require(existing.empty() || existing.dim() == hyper.dim(), "ima_next_component: dimension mismatch");
  UnitVector dir = existing.empty()
                       ? (hyper.concentration < kUniformConcentration
                              ? uniform_sphere_sample(hyper.dim(), rng)
                              : vmf_sample(VmfParams(hyper.base_direction, hyper.concentration), rng))
                       : draw_local_direction(existing.direction_prefix_sum(existing.size()), hyper, rng);
  const double g = gamma_sample(hyper.magnitude, rng);
  return {std::move(dir), g};
}

ComponentSet sample_mabn(int K, const MabnHyper& hyper, Rng& rng) {
  require(K >= 1, "sample_mabn: K must be >= 1");
  ComponentSet set(hyper.dim());
  for (int i = 0; i < K; ++i) {
    auto [dir, g] = ima_next_component(set, hyper, rng);
    set.push_back(std::move(dir), g);
  }
  return set;
}

}  // namespace divbayes
