#include "divbayes/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

namespace divbayes {

double classification_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  require(predicted.size() == truth.size(), "classification_accuracy: length mismatch");
  require(!truth.empty(), "classification_accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::vector<int> hungarian_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  require(n <= m, "hungarian_assignment: more rows than columns");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Potentials formulation, 1-based with a sentinel column 0.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) out[p[j] - 1] = j - 1;
  return out;
}

ClusteringScores clustering_metrics(const std::vector<int>& predicted, const std::vector<int>& truth) {
  require(predicted.size() == truth.size(), "clustering_metrics: length mismatch");
  require(!truth.empty(), "clustering_metrics: empty input");
  std::map<int, int> pi, ti;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(predicted[i] >= 0 && truth[i] >= 0, "clustering_metrics: labels must be nonnegative");
    pi.emplace(predicted[i], static_cast<int>(pi.size()));
    ti.emplace(truth[i], static_cast<int>(ti.size()));
  }
  const int P = static_cast<int>(pi.size());
  const int T = static_cast<int>(ti.size());
  Matrix C = Matrix::Zero(P, T);
  for (std::size_t i = 0; i < truth.size(); ++i) C(pi[predicted[i]], ti[truth[i]]) += 1.0;
  const double N = static_cast<double>(truth.size());

  const int S = std::max(P, T);
  Matrix cost = Matrix::Zero(S, S);
  cost.topLeftCorner(P, T) = -C;
  const auto match = hungarian_assignment(cost);
  double matched = 0.0;
  for (int i = 0; i < P; ++i)
    if (match[i] < T) matched += C(i, match[i]);

  const Vector rp = C.rowwise().sum() / N;
  const Vector ct = C.colwise().sum().transpose() / N;
  double mi = 0.0, hp = 0.0, ht = 0.0;
  for (int i = 0; i < P; ++i) hp -= rp(i) * std::log(rp(i));
  for (int j = 0; j < T; ++j) ht -= ct(j) * std::log(ct(j));
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < T; ++j)
      if (C(i, j) > 0.0) {
        const double pij = C(i, j) / N;
        mi += pij * std::log(pij / (rp(i) * ct(j)));
      }
  const double den = std::sqrt(hp * ht);
  const double nmi = den > 0.0 ? mi / den : 0.0;
  return {matched / N, std::clamp(nmi, 0.0, 1.0)};
}

PrecisionAtK precision_at_k(const Matrix& queries, const Matrix& corpus, const std::vector<int>& query_labels,
                            const std::vector<int>& corpus_labels, int k) {
  require(queries.cols() == corpus.cols(), "precision_at_k: dimension mismatch");
  require(static_cast<Eigen::Index>(query_labels.size()) == queries.rows(), "precision_at_k: query label count");
  require(static_cast<Eigen::Index>(corpus_labels.size()) == corpus.rows(), "precision_at_k: corpus label count");
  require(k >= 1, "precision_at_k: k must be positive");
  if (k > corpus.rows()) throw InvalidArgument("precision_at_k: k exceeds the corpus size");
  PrecisionAtK out;
  out.per_query.resize(queries.rows());
  const int M = static_cast<int>(corpus.rows());
  std::vector<int> idx(M);
  std::vector<double> dist(M);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (int j = 0; j < M; ++j) dist[j] = (corpus.row(j) - queries.row(q)).squaredNorm();
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [&](int a, int b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    int hit = 0;
    for (int i = 0; i < k; ++i) hit += corpus_labels[idx[i]] == query_labels[q];
    out.per_query[q] = static_cast<double>(hit) / k;
  }
  out.mean = out.per_query.empty()
                 ? 0.0
                 : std::accumulate(out.per_query.begin(), out.per_query.end(), 0.0) / out.per_query.size();
  return out;
}

std::optional<double> relative_improvement(double accuracy, double baseline) {
  if (!(baseline > 0.0)) return std::nullopt;
  return (accuracy - baseline) / baseline * 100.0;
}

std::vector<PatternRow> per_pattern_report(const std::vector<bool>& correct, const std::vector<int>& pattern_ids,
                                           const std::vector<double>& frequencies,
                                           const std::vector<bool>* baseline_correct) {
  require(correct.size() == pattern_ids.size(), "per_pattern_report: length mismatch");
  if (baseline_correct) require(baseline_correct->size() == correct.size(), "per_pattern_report: baseline length mismatch");
  std::map<int, std::array<int, 3>> tally;  // count, correct, baseline correct
  for (std::size_t i = 0; i < correct.size(); ++i) {
    auto& t = tally[pattern_ids[i]];
    ++t[0];
    t[1] += correct[i];
    if (baseline_correct) t[2] += (*baseline_correct)[i];
  }
  require(frequencies.empty() || frequencies.size() == tally.size(),
          "per_pattern_report: need one frequency per pattern");
  std::vector<PatternRow> rows;
  std::size_t f = 0;
  for (const auto& [id, t] : tally) {
    PatternRow r;
    r.pattern = id;
    r.count = t[0];
    r.frequency = frequencies.empty() ? std::numeric_limits<double>::quiet_NaN() : frequencies[f];
    r.accuracy = static_cast<double>(t[1]) / t[0];
    if (baseline_correct) {
      r.baseline_accuracy = static_cast<double>(t[2]) / t[0];
      r.improvement = relative_improvement(r.accuracy, *r.baseline_accuracy);
    }
    rows.push_back(r);
    ++f;
  }
  return rows;
}

void write_pattern_report_csv(std::ostream& os, const std::vector<PatternRow>& rows) {
  os << "pattern,count,frequency,accuracy,baseline_accuracy,relative_improvement_pct\n";
  for (const auto& r : rows) {
    os << r.pattern << ',' << r.count << ',';
    if (std::isfinite(r.frequency)) os << r.frequency;
    os << ',' << r.accuracy << ',';
    if (r.baseline_accuracy) os << *r.baseline_accuracy;
    os << ',';
    if (r.improvement) {
      os << *r.improvement;
    } else if (r.baseline_accuracy) {
      os << "undefined";
    }
    os << '\n';
  }
}

namespace {

KMeansResult lloyd(const Matrix& X, int k, Rng& rng, int max_iterations) {
  const Eigen::Index N = X.rows();
  Matrix C(k, X.cols());
  // k-means++ seeding.
  C.row(0) = X.row(static_cast<Eigen::Index>(uniform01(rng) * N) % N);
  Vector d2(N);
  for (Eigen::Index n = 0; n < N; ++n) d2(n) = (X.row(n) - C.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = static_cast<Eigen::Index>(uniform01(rng) * N) % N;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      for (Eigen::Index n = 0; n < N; ++n) {
        u -= d2(n);
        if (u <= 0.0) {
          pick = n;
          break;
        }
      }
    }
    C.row(c) = X.row(pick);
    for (Eigen::Index n = 0; n < N; ++n) d2(n) = std::min(d2(n), (X.row(n) - C.row(c)).squaredNorm());
  }
  std::vector<int> labels(N, -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (Eigen::Index n = 0; n < N; ++n) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (X.row(n) - C.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      changed |= labels[n] != best;
      labels[n] = best;
    }
    if (!changed) break;
    Matrix sum = Matrix::Zero(k, X.cols());
    std::vector<int> cnt(k, 0);
    for (Eigen::Index n = 0; n < N; ++n) {
      sum.row(labels[n]) += X.row(n);
      ++cnt[labels[n]];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[c]) C.row(c) = sum.row(c) / cnt[c];
  }
  double inertia = 0.0;
  for (Eigen::Index n = 0; n < N; ++n) inertia += (X.row(n) - C.row(labels[n])).squaredNorm();
  return {labels, C, inertia};
}

}  // namespace

KMeansResult kmeans(const Matrix& X, int k, std::uint64_t seed, int restarts, int max_iterations) {
  require(k >= 1 && k <= X.rows(), "kmeans: need 1 <= k <= N");
  require(restarts >= 1 && max_iterations >= 1, "kmeans: bad iteration settings");
  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    auto res = lloyd(X, k, rng, max_iterations);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

}  // namespace divbayes
