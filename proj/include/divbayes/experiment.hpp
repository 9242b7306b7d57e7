#ifndef DIVBAYES_EXPERIMENT_HPP
#define DIVBAYES_EXPERIMENT_HPP

#include "divbayes/bmem.hpp"
#include "divbayes/config.hpp"
#include "divbayes/ilfm.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace divbayes {

// Exit codes of run_experiment and the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

const char* library_version();

struct ExperimentOutcome {
  int exit_code = kExitOk;
  std::string error_kind;  // config | data | numerical | internal, empty on success
  std::string message;
  std::string summary;     // text also written to summary.txt
};

// Runs the configured task and writes manifest.json, metrics.jsonl,
// summary.txt and checkpoints under config.out. Errors are caught, written to
// error.json and reported through the exit code.
ExperimentOutcome run_experiment(const ExperimentConfig& config);

// One model for VI and PR (the plug-in posterior mean), the stored samples
// for MH.
struct BmemCheckpoint {
  std::string fitter;
  std::uint64_t seed = 0;
  int sweeps = 0;
  std::vector<BmemModel> models;
};
//   divbayes-bmem 1
//   K <K> p <p> fitter <name> seed <seed> sweeps <n> models <M>
//   M x (expert component set, gate component set)
void write_bmem_checkpoint(std::ostream& os, const BmemCheckpoint& cp);
BmemCheckpoint read_bmem_checkpoint(std::istream& is);

struct IlfmCheckpoint {
  std::uint64_t seed = 0;
  int sweep = 0;  // completed sweeps
  double ghmc_step = 0.01;
  int window_accepted = 0;
  int window_attempted = 0;
  std::vector<int> kept_active;  // K+ of retained samples so far
  std::string rng_state;
  IlfmState state;
};
//   divbayes-ilfm-checkpoint 1
//   seed <seed> sweep <n> ghmc_step <eps> window <acc> <att>
//   kept <count> <values...>
//   <rng state line>
//   ilfm state block
void write_ilfm_checkpoint(std::ostream& os, const IlfmCheckpoint& cp);
IlfmCheckpoint read_ilfm_checkpoint(std::istream& is);

// "bmem", "ilfm" or "" from the first token of a checkpoint file.
std::string checkpoint_kind(const std::string& path);

// Best |cosine| per template under a one-to-one matching of templates to
// features (rows of both matrices). Unmatched templates get 0.
std::vector<double> template_recovery(const Matrix& templates, const Matrix& features);

}  // namespace divbayes

#endif  // DIVBAYES_EXPERIMENT_HPP
