#include "divbayes/ars.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace divbayes {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log of the integral of exp(h + s (x - x0)) over [a, b].
double log_segment_mass(double h, double s, double x0, double a, double b) {
  if (!(b > a)) return -kInf;
  if (std::abs(s) < 1e-300) return h + std::log(b - a);
  if (s > 0.0) {
    const double lb = h + s * (b - x0);
    const double span = std::isfinite(a) ? -std::expm1(-s * (b - a)) : 1.0;
    return lb + std::log(span) - std::log(s);
  }
  const double la = h + s * (a - x0);
  const double span = std::isfinite(b) ? -std::expm1(s * (b - a)) : 1.0;
  return la + std::log(span) - std::log(-s);
}

double sample_segment(double s, double a, double b, double u) {
  if (std::abs(s) < 1e-300) return a + u * (b - a);
  if (s > 0.0) {
    const double span = std::isfinite(a) ? -std::expm1(-s * (b - a)) : 1.0;
    return b + std::log1p(-u * span) / s;
  }
  const double span = std::isfinite(b) ? -std::expm1(s * (b - a)) : 1.0;
  return a - std::log1p(-u * span) / (-s);
}

struct Point {
  double x;
  double h;
  double dh;
};

}  // namespace

double grid_inverse_cdf(const std::function<double(double)>& log_density, double lo, double hi, Rng& rng,
                        int cells) {
  require(hi > lo && std::isfinite(lo) && std::isfinite(hi), "grid_inverse_cdf: bad interval");
  require(cells >= 2, "grid_inverse_cdf: need at least two cells");
  const double w = (hi - lo) / cells;
  std::vector<double> lw(cells);
  double mx = -kInf;
  for (int i = 0; i < cells; ++i) {
    lw[i] = log_density(lo + (i + 0.5) * w);
    if (std::isnan(lw[i])) lw[i] = -kInf;
    mx = std::max(mx, lw[i]);
  }
  if (!std::isfinite(mx)) throw NumericalError("grid_inverse_cdf: density vanishes on the grid");
  std::vector<double> cum(cells);
  double total = 0.0;
  for (int i = 0; i < cells; ++i) {
    total += std::exp(lw[i] - mx);
    cum[i] = total;
  }
  const double u = uniform01(rng) * total;
  const auto it = std::lower_bound(cum.begin(), cum.end(), u);
  const int i = static_cast<int>(std::min<std::ptrdiff_t>(it - cum.begin(), cells - 1));
  return lo + (i + uniform01(rng)) * w;
}

bool looks_log_concave(const LogConcaveTarget& t, double lo, double hi, int points) {
  require(hi > lo, "looks_log_concave: bad interval");
  double prev = kInf;
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * (i + 0.5) / points;
    const double d = t.derivative(x);
    if (!std::isfinite(d)) continue;
    if (d > prev + 1e-9 * std::max(1.0, std::abs(prev))) return false;
    prev = d;
  }
  return true;
}

ArsResult ars_sample(const LogConcaveTarget& t, std::vector<double> start, Rng& rng, int max_points) {
  require(t.upper > t.lower, "ars_sample: empty support");
  ArsResult out;
  std::vector<Point> pts;
  for (double x : start) {
    if (!(x > t.lower && x < t.upper)) continue;
    const double h = t.log_density(x);
    const double d = t.derivative(x);
    if (std::isfinite(h) && std::isfinite(d)) pts.push_back({x, h, d});
  }
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });

  const auto fallback = [&](const std::string& why) {
    double lo = t.lower;
    double hi = t.upper;
    const double anchor_lo = pts.empty() ? 0.0 : pts.front().x;
    const double anchor_hi = pts.empty() ? 0.0 : pts.back().x;
    if (!std::isfinite(lo)) {
      const double s = pts.empty() ? 1.0 : std::max(pts.front().dh, 1e-2);
      lo = std::min(anchor_lo, std::isfinite(hi) ? hi : anchor_lo) - 60.0 / s;
    }
    if (!std::isfinite(hi)) {
      const double s = pts.empty() ? 1.0 : std::max(-pts.back().dh, 1e-2);
      hi = std::max(anchor_hi, lo) + 60.0 / s;
    }
    out.value = grid_inverse_cdf(t.log_density, lo, hi, rng);
    out.used_fallback = true;
    out.envelope_points = static_cast<int>(pts.size());
    out.event = why;
    return out;
  };

  if (pts.empty()) return fallback("no finite start point");
  // Anchors: positive slope on the left of an unbounded lower end, negative
  // slope on the right of an unbounded upper end.
  if (!std::isfinite(t.lower)) {
    double step = 1.0;
    for (int i = 0; i < 60 && !(pts.front().dh > 0.0); ++i, step *= 2.0) {
      const double x = pts.front().x - step;
      const double h = t.log_density(x);
      const double d = t.derivative(x);
      if (!std::isfinite(h) || !std::isfinite(d)) break;
      pts.insert(pts.begin(), {x, h, d});
    }
    if (!(pts.front().dh > 0.0)) return fallback("no left anchor");
  }
  if (!std::isfinite(t.upper)) {
    double step = 1.0;
    for (int i = 0; i < 60 && !(pts.back().dh < 0.0); ++i, step *= 2.0) {
      const double x = pts.back().x + step;
      const double h = t.log_density(x);
      const double d = t.derivative(x);
      if (!std::isfinite(h) || !std::isfinite(d)) break;
      pts.push_back({x, h, d});
    }
    if (!(pts.back().dh < 0.0)) return fallback("no right anchor");
  }

  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t k = pts.size();
    for (std::size_t i = 1; i < k; ++i)
      if (pts[i].dh > pts[i - 1].dh + 1e-9 * std::max(1.0, std::abs(pts[i - 1].dh)))
        return fallback("target is not log-concave");
    // Segment i uses the tangent at pts[i] over [z[i], z[i+1]].
    std::vector<double> z(k + 1);
    z[0] = t.lower;
    z[k] = t.upper;
    for (std::size_t i = 0; i + 1 < k; ++i) {
      const Point& a = pts[i];
      const Point& b = pts[i + 1];
      const double den = a.dh - b.dh;
      double zi = 0.5 * (a.x + b.x);
      if (den > 1e-12 * std::max(1.0, std::abs(a.dh))) zi = (b.h - a.h - b.x * b.dh + a.x * a.dh) / den;
      z[i + 1] = std::clamp(zi, a.x, b.x);
    }
    std::vector<double> lm(k);
    double mx = -kInf;
    for (std::size_t i = 0; i < k; ++i) {
      lm[i] = log_segment_mass(pts[i].h, pts[i].dh, pts[i].x, z[i], z[i + 1]);
      if (std::isnan(lm[i])) return fallback("envelope mass is not a number");
      mx = std::max(mx, lm[i]);
    }
    if (!std::isfinite(mx)) return fallback("envelope has no mass");
    double total = 0.0;
    for (double v : lm) total += std::exp(v - mx);
    double u = uniform01(rng) * total;
    std::size_t seg = 0;
    for (; seg + 1 < k; ++seg) {
      u -= std::exp(lm[seg] - mx);
      if (u <= 0.0) break;
    }
    const Point& p = pts[seg];
    double x = sample_segment(p.dh, z[seg], z[seg + 1], uniform01(rng));
    x = std::clamp(x, z[seg], z[seg + 1]);
    if (!(x > t.lower && x < t.upper)) continue;
    const double hx = t.log_density(x);
    if (std::isnan(hx)) return fallback("target returned NaN");
    const double env = p.h + p.dh * (x - p.x);
    if (hx > env + 1e-9 * std::max(1.0, std::abs(env))) return fallback("target exceeds its tangent envelope");
    if (std::log(uniform01(rng)) <= hx - env) {
      out.value = x;
      out.envelope_points = static_cast<int>(pts.size());
      return out;
    }
    if (std::isfinite(hx) && static_cast<int>(pts.size()) < max_points) {
      const double dx = t.derivative(x);
      if (std::isfinite(dx)) {
        const auto pos = std::lower_bound(pts.begin(), pts.end(), x, [](const Point& q, double v) { return q.x < v; });
        if (pos == pts.end() || pos->x != x) pts.insert(pos, {x, hx, dx});
      }
    }
  }
  return fallback("too many rejections");
}

}  // namespace divbayes
