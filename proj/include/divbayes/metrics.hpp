#ifndef DIVBAYES_METRICS_HPP
#define DIVBAYES_METRICS_HPP

#include "divbayes/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace divbayes {

double classification_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

struct ClusteringScores {
  double accuracy = 0.0;
  double nmi = 0.0;
};

// Labels must be nonnegative. Accuracy uses the best one-to-one matching of
// clusters to classes; NMI is normalized by the geometric mean of the two
// entropies, with 0/0 taken as 0.
ClusteringScores clustering_metrics(const std::vector<int>& predicted, const std::vector<int>& truth);

// Minimum-cost assignment on a square or wide cost matrix (rows <= cols).
// Returns the column chosen for every row.
std::vector<int> hungarian_assignment(const Matrix& cost);

struct PrecisionAtK {
  std::vector<double> per_query;
  double mean = 0.0;
};

// Euclidean retrieval over the corpus, ties broken by corpus index. Rows are
// items.
PrecisionAtK precision_at_k(const Matrix& queries, const Matrix& corpus, const std::vector<int>& query_labels,
                            const std::vector<int>& corpus_labels, int k);

struct PatternRow {
  int pattern = 0;
  int count = 0;
  double frequency = 0.0;  // as supplied; NaN when not given
  double accuracy = 0.0;
  std::optional<double> baseline_accuracy;
  // (accuracy - baseline) / baseline * 100; empty when the baseline is 0 or absent.
  std::optional<double> improvement;
};

// Accuracy per pattern id, optionally against an aligned baseline run.
// frequencies may be empty or hold one entry per distinct pattern in
// ascending id order.
std::vector<PatternRow> per_pattern_report(const std::vector<bool>& correct, const std::vector<int>& pattern_ids,
                                           const std::vector<double>& frequencies = {},
                                           const std::vector<bool>* baseline_correct = nullptr);
std::optional<double> relative_improvement(double accuracy, double baseline);
void write_pattern_report_csv(std::ostream& os, const std::vector<PatternRow>& rows);

struct KMeansResult {
  std::vector<int> labels;
  Matrix centers;  // k x D
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeds; best of `restarts` by inertia.
KMeansResult kmeans(const Matrix& X, int k, std::uint64_t seed, int restarts = 10, int max_iterations = 300);

}  // namespace divbayes

#endif  // DIVBAYES_METRICS_HPP
