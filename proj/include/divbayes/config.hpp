#ifndef DIVBAYES_CONFIG_HPP
#define DIVBAYES_CONFIG_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace divbayes {

// Flat "key = value" settings. Lines starting with '#' and blank lines are
// ignored. Unknown keys and malformed values raise ConfigError naming the
// line.
struct ExperimentConfig {
  std::string task;       // train-bmem | train-ilfm | eval | sample-prior | diagnose
  std::string algorithm;  // vi | mh | pr | gibbs
  std::uint64_t seed = 1;
  std::string out = "run";
  int workers = 1;
  bool strict_paper = false;

  // data
  std::string train_path;
  std::string test_path;
  std::string format = "sparse-labeled";  // sparse-labeled | dense-labeled | dense-matrix
  int dim = 0;                            // sparse dimension, 0 infers it
  bool center = false;
  std::string synthetic;  // xor | separable | blocks; used when train_path is empty
  int synthetic_n = 1000;
  int synthetic_test_n = 1000;
  double synthetic_noise = 0.5;  // blocks pixel noise sigma
  double synthetic_margin = 0.1;
  int synthetic_dim = 5;  // separable

  // components and priors
  int K = 2;
  std::string prior = "mabn";  // mabn | independent (bmem); mabn | iid (sample-prior)
  double kappa = 1.0;
  double magnitude_shape = 2.0;
  double magnitude_rate = 1.0;
  double lambda_expert = 0.0;
  double lambda_gate = 0.0;
  double variance_weight = 1.0;

  // vi / pr
  int vi_max_sweeps = 500;
  double vi_tolerance = 1e-6;
  int vi_patience = 3;
  double vi_kappa_hat_init = 10.0;
  bool vi_learn_kappa_hat = true;
  int vi_restarts = 1;
  bool vi_paper_area = false;

  // mh
  int mh_burn_in = 2000;
  int mh_samples = 1000;
  int mh_thin = 5;
  double mh_direction_kappa = 100.0;
  double mh_magnitude_sigma = 0.5;
  int mh_chains = 1;
  bool mh_adapt = true;

  // ilfm
  double alpha = 2.0;
  std::string noise_rule = "auto";  // auto (0.25 x data sd) or a positive variance
  bool resample_noise = false;
  double noise_prior_shape = 1.0;
  double noise_prior_rate = 1.0;
  int ilfm_sweeps = 1000;
  int ilfm_burn_in = 500;
  int ilfm_thin = 5;
  int ilfm_init_features = 4;
  double ghmc_step = 0.01;
  int ghmc_steps = 20;
  bool ghmc_adapt = true;
  int magnitude_steps = 3;
  double magnitude_proposal = 0.2;
  int checkpoint_every = 100;
  std::string resume;

  // eval / diagnose / sample-prior
  std::string checkpoint;
  std::string baseline_checkpoint;
  std::string patterns_path;
  int precision_k = 0;  // > 0 adds precision@k on ilfm representations
  int clusters = 0;     // > 0 adds k-means clustering on ilfm representations
  std::string labels_path;

  void validate() const;
  // Canonical "key = value" listing of every field, in table order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

std::vector<std::string> config_keys();
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::string& path);
void write_config(std::ostream& os, const ExperimentConfig& config);
// FNV-1a over the canonical listing, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace divbayes

#endif  // DIVBAYES_CONFIG_HPP
