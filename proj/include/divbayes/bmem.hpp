#ifndef DIVBAYES_BMEM_HPP
#define DIVBAYES_BMEM_HPP

#include "divbayes/bounds.hpp"
#include "divbayes/data.hpp"
#include "divbayes/mabn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace divbayes {

// Gated mixture of logistic experts. beta_k = experts.vector(k),
// eta_k = gates.vector(k).
struct BmemModel {
  ComponentSet experts;
  ComponentSet gates;
  int num_experts() const { return static_cast<int>(experts.size()); }
  void validate() const;
};

// sum_k softmax_k(eta . x) sigmoid(beta_k . x)
double bmem_predict(const Vector& x, const BmemModel& model);
double bmem_predict_average(const Vector& x, const std::vector<BmemModel>& samples);
std::vector<double> bmem_predict_all(const Matrix& X, const BmemModel& model);
std::vector<double> bmem_predict_all(const Matrix& X, const std::vector<BmemModel>& samples);

struct BmemHyper {
  MabnHyper expert;
  MabnHyper gate;
};
// mu_0 = e_1, Gamma(shape, rate) magnitudes, same hyper for both chains.
BmemHyper make_bmem_hyper(int dim, double kappa, double shape, double rate);

// MABN: type II prior over the components, handled through the partition bound.
// Independent: iid vMF(mu_0, kappa) x Gamma per component.
enum class PriorForm { Mabn, Independent };

struct BmemVariationalState {
  std::vector<MabnVariationalFactor> expert_factors;
  std::vector<MabnVariationalFactor> gate_factors;
  double kappa_hat = 10.0;  // shared by every direction factor
  Matrix phi;               // N x K assignment probabilities
  Vector c;                 // N, gate log-sum-exp aux
  Matrix d;                 // N x K, gate logistic aux
  Matrix e;                 // N x K, expert logistic aux
  std::vector<BoundAuxParams> aux_expert;  // K - 1
  std::vector<BoundAuxParams> aux_gate;    // K - 1

  int num_experts() const { return static_cast<int>(expert_factors.size()); }
  // Plug-in model: A_p(kappa_hat) * direction mean * gamma mean.
  BmemModel plug_in_model() const;
  void check_invariants() const;
};

struct ViConfig {
  int max_sweeps = 500;
  double tolerance = 1e-6;  // relative objective change
  int patience = 3;         // consecutive sweeps under tolerance
  double kappa_hat_init = 10.0;
  bool learn_kappa_hat = true;
  int direction_iterations = 10;
  int magnitude_iterations = 4;
  bool paper_area = false;
  int restarts = 1;
  std::uint64_t seed = 1;
  // Posterior regularization weights; ignored by bmem_vi_fit.
  double lambda_expert = 0.0;
  double lambda_gate = 0.0;
  double variance_weight = 1.0;
  void validate() const;
};

struct ViTrace {
  std::vector<double> objective;  // after initialization, then per sweep
  int sweeps = 0;
  bool converged = false;
  double max_decrease = 0.0;  // largest sweep-to-sweep drop, >= 0
};

struct ViResult {
  BmemVariationalState state;
  ViTrace trace;
};

double bmem_elbo(const BmemVariationalState& state, const LabeledDataset& data, const BmemHyper& hyper,
                 PriorForm prior = PriorForm::Mabn, bool paper_area = false);
// ELBO under the independent prior plus the two mutual angular terms.
double bmem_pr_objective(const BmemVariationalState& state, const LabeledDataset& data,
                         const BmemHyper& hyper, const ViConfig& config);

ViResult bmem_vi_fit(const LabeledDataset& data, int K, const BmemHyper& hyper, const ViConfig& config,
                     PriorForm prior = PriorForm::Mabn);
ViResult bmem_pr_fit(const LabeledDataset& data, int K, const BmemHyper& hyper, double lambda1,
                     double lambda2, const ViConfig& config);

struct AngleStats {
  double mean = 0.0;
  double variance = 0.0;
};
// Mean and (population) variance of nonobtuse angles over ordered pairs i != j.
AngleStats pairwise_angle_stats(const std::vector<Vector>& vectors);
// mean - variance_weight * variance
double mutual_angular_regularizer(const std::vector<Vector>& vectors, double variance_weight);
// Ambient gradient of the regularizer with respect to each vector. Pairs with
// |cos| = 1 or cos = 0 contribute a zero subgradient.
std::vector<Vector> mutual_angular_gradient(const std::vector<Vector>& vectors, double variance_weight);

struct MhConfig {
  int burn_in = 2000;
  int num_samples = 1000;
  int thin = 5;
  double direction_kappa = 100.0;  // vMF random-walk concentration
  double magnitude_sigma = 0.5;    // truncated normal random-walk scale
  bool adapt_during_burn_in = true;
  bool flat_likelihood = false;
  std::uint64_t seed = 1;
  int chains = 1;   // independent chains, samples concatenated in chain order
  int workers = 1;  // threads running the chains
  void validate() const;
};

struct MhDiagnostics {
  double direction_acceptance = 0.0;
  double magnitude_acceptance = 0.0;
  double final_direction_kappa = 0.0;
  double final_magnitude_sigma = 0.0;
  std::vector<std::string> warnings;
};

struct MhResult {
  std::vector<BmemModel> samples;
  std::vector<double> log_target;  // per stored sample
  MhDiagnostics diagnostics;
};

// sum_n log p(y_n | x_n, model)
double bmem_log_likelihood(const BmemModel& model, const LabeledDataset& data);
// type I prior on both chains plus the log likelihood
double bmem_log_target(const BmemModel& model, const LabeledDataset& data, const BmemHyper& hyper,
                       bool flat_likelihood = false);

MhResult bmem_mh_fit(const LabeledDataset& data, int K, const BmemHyper& hyper, const MhConfig& config);
// Same, starting from a given model.
MhResult bmem_mh_fit_from(const LabeledDataset& data, BmemModel init, const BmemHyper& hyper,
                          const MhConfig& config);

// Hastings correction for a positive random walk with N(g, sigma^2) truncated
// to (0, inf): log q(g | g') - log q(g' | g).
double truncated_normal_log_hastings(double g, double g_new, double sigma);
double truncated_normal_sample(double mean, double sigma, Rng& rng);

// Gamma MLE from E[g] and E[log g] by Newton on log a - psi(a) = log m - l.
// Returns fallback when the statistics are degenerate.
GammaParams gamma_mle(double mean, double mean_log, const GammaParams& fallback);

// M-step: mu_0 from the expected first direction, (alpha_1, alpha_2) by gamma
// MLE on expected magnitude statistics; kappa unchanged.
MabnHyper em_hyper_update(const std::vector<ComponentSet>& samples, const MabnHyper& current);
MabnHyper em_hyper_update(const std::vector<MabnVariationalFactor>& factors, const MabnHyper& current);

}  // namespace divbayes

#endif  // DIVBAYES_BMEM_HPP
