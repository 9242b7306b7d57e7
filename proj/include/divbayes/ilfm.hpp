#ifndef DIVBAYES_ILFM_HPP
#define DIVBAYES_ILFM_HPP

#include "divbayes/ars.hpp"
#include "divbayes/ghmc.hpp"
#include "divbayes/mabn.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace divbayes {

using Allocation = Eigen::MatrixXi;

struct IlfmConfig {
  double kappa = 1.0;  // IMA concentration; 0 gives independent uniform directions
  double alpha = 2.0;  // stick-breaking mass
  double magnitude_shape = 2.0;
  double magnitude_rate = 1.0;
  // Gaussian noise variance; <= 0 means 0.25 times the standard deviation of
  // the data across all dimensions.
  double noise_variance = 0.0;
  bool resample_noise = false;  // conjugate inverse-gamma update
  double noise_prior_shape = 1.0;
  double noise_prior_rate = 1.0;
  GhmcConfig ghmc;
  int magnitude_steps = 3;
  double magnitude_proposal = 0.2;  // truncated normal random-walk scale
  // Alternative forms: a mu_k / mu* factor on the z = 1 branch and origin
  // projection inside the leapfrog.
  bool strict_paper = false;
  void validate() const;
  MabnHyper prior(int dim) const;
};

// Features in stick order. Columns of Z line up with features and sticks.
// The last represented feature is inactive; everything after it is
// marginalized out.
struct IlfmState {
  ComponentSet features;
  Allocation Z;                // N x L
  std::vector<double> sticks;  // strictly decreasing in (0, 1]
  double slice = 1.0;
  double noise_variance = 1.0;

  int represented() const { return static_cast<int>(sticks.size()); }
  int num_examples() const { return static_cast<int>(Z.rows()); }
  std::vector<int> column_counts() const;
  int num_active() const;
  int last_active() const;  // -1 when no feature is active
  // min(1, stick of the last active feature)
  double mu_star() const;
  void check_invariants() const;
};

struct SweepStats {
  int added = 0;
  int trimmed = 0;
  int ghmc_accepted = 0;
  int ghmc_attempted = 0;
  int magnitude_accepted = 0;
  int magnitude_attempted = 0;
  int ars_fallbacks = 0;
  std::vector<std::string> events;
};

double default_noise_variance(const Matrix& X);

// One boundary feature drawn from the prior, no active features.
IlfmState ilfm_initial_state(int N, int dim, const IlfmConfig& config, Rng& rng);

// Starting point from data: num_features columns of Z drawn Bernoulli(1/2),
// feature vectors by ridge least squares on X, sticks from the stick-breaking
// prior conditioned to stay ordered, one boundary feature after them.
IlfmState ilfm_data_initial_state(const Matrix& X, int num_features, const IlfmConfig& config, Rng& rng);

// Draws s ~ Uniform(0, mu*] and stores it in the state.
double slice_sample_auxiliary(IlfmState& state, Rng& rng);

// New stick below prev with all later columns empty:
// density ∝ exp(alpha sum_{n<=N} (1-mu)^n / n) mu^(alpha-1) (1-mu)^N on [0, prev].
double sample_new_stick(double prev, int N, double alpha, Rng& rng, ArsResult* info = nullptr);
// log density of the new-stick law in u = log mu and its derivative.
double new_stick_log_density(double u, int N, double alpha);
double new_stick_log_density_derivative(double u, int N, double alpha);

// Appends features until the last stick is at or below the slice. Returns the
// number added.
int extend_features(IlfmState& state, const IlfmConfig& config, Rng& rng, SweepStats* stats = nullptr);

// log p(z_nk = 1 | rest) - log p(z_nk = 0 | rest) given the residual with
// feature k removed.
double assignment_log_odds(const IlfmState& state, const std::vector<int>& counts, int n, int k,
                           const Vector& residual_without_k, const IlfmConfig& config);
void resample_assignments(IlfmState& state, const Matrix& X, const IlfmConfig& config, Rng& rng);

// Drops represented features after the first inactive one following the last
// active feature.
int trim_inactive_tail(IlfmState& state);

// Beta(a, b) truncated to [lo, hi] by inverse CDF of the regularized
// incomplete beta function.
double sample_truncated_beta(double a, double b, double lo, double hi, Rng& rng);
void resample_stick_weights(IlfmState& state, const IlfmConfig& config, Rng& rng, SweepStats* stats = nullptr);

// Unnormalized conditional of direction k with its ambient gradient.
TargetOnSphere feature_direction_target(const IlfmState& state, const Matrix& X, int k,
                                        const IlfmConfig& config);
double feature_magnitude_log_target(const IlfmState& state, const Matrix& X, int k, double r,
                                    const IlfmConfig& config);
GhmcResult resample_feature_vector(IlfmState& state, const Matrix& X, int k, const IlfmConfig& config, Rng& rng,
                                   SweepStats* stats = nullptr);

void resample_noise_variance(IlfmState& state, const Matrix& X, const IlfmConfig& config, Rng& rng);

// slice -> extend -> assignments -> trim -> sticks -> feature vectors -> noise.
SweepStats ilfm_gibbs_sweep(IlfmState& state, const Matrix& X, const IlfmConfig& config, Rng& rng);

// Forward draw of sticks, allocations and features for N examples. Sticks are
// generated until they fall below tail; the result is trimmed like a sampler
// state.
IlfmState ilfm_prior_draw(int N, int dim, const IlfmConfig& config, Rng& rng, double tail = 1e-12);
// x_n = sum_k z_nk w_k + N(0, sigma^2 I)
Matrix ilfm_generate_data(const IlfmState& state, Rng& rng);

Matrix active_feature_matrix(const IlfmState& state);  // rows are features
std::vector<double> active_sticks(const IlfmState& state);
// Mean nonobtuse angle over pairs of active features; NaN with fewer than two.
double mean_pairwise_feature_angle(const IlfmState& state);

// Allocations of new examples with the active features frozen: Gibbs sweeps
// under prior odds followed by coordinate-wise maximization.
Allocation infer_allocations(const IlfmState& state, const Matrix& X, const IlfmConfig& config, Rng& rng,
                             int gibbs_sweeps = 10, int greedy_sweeps = 5);

struct IlfmMetrics {
  double l2_error = 0.0;        // mean residual norm
  double log_likelihood = 0.0;  // mean Gaussian log density of the residual
};
// Z has one column per active feature, in order.
IlfmMetrics ilfm_metrics(const IlfmState& state, const Matrix& X, const Allocation& Z);

// Text format, round-trips bit-exactly:
//   divbayes-ilfm 1
//   <N> <L> <D>
//   <slice> <noise_variance>
//   L sticks
//   component set block
//   N rows of L 0/1 entries
void write_ilfm_state(std::ostream& os, const IlfmState& state);
IlfmState read_ilfm_state(std::istream& is);

}  // namespace divbayes

#endif  // DIVBAYES_ILFM_HPP
