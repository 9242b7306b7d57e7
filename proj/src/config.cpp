#include "divbayes/config.hpp"

#include "divbayes/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

namespace divbayes {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || !std::isfinite(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field field(const std::string& key, T ExperimentConfig::*m) {
  Field f;
  f.key = key;
  if constexpr (std::is_same_v<T, std::string>) {
    f.set = [m](ExperimentConfig& c, const std::string& v) { c.*m = v; };
    f.get = [m](const ExperimentConfig& c) { return c.*m; };
  } else if constexpr (std::is_same_v<T, bool>) {
    f.set = [m, key](ExperimentConfig& c, const std::string& v) { c.*m = parse_bool(key, v); };
    f.get = [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); };
  } else if constexpr (std::is_same_v<T, double>) {
    f.set = [m, key](ExperimentConfig& c, const std::string& v) { c.*m = parse_double(key, v); };
    f.get = [m](const ExperimentConfig& c) { return fmt_double(c.*m); };
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    f.set = [m, key](ExperimentConfig& c, const std::string& v) {
      const long long x = parse_int(key, v);
      if (x < 0) throw ConfigError(key + ": must be >= 0");
      c.*m = static_cast<std::uint64_t>(x);
    };
    f.get = [m](const ExperimentConfig& c) { return std::to_string(c.*m); };
  } else {
    f.set = [m, key](ExperimentConfig& c, const std::string& v) {
      const long long x = parse_int(key, v);
      if (x < -2147483647LL || x > 2147483647LL) throw ConfigError(key + ": out of range");
      c.*m = static_cast<int>(x);
    };
    f.get = [m](const ExperimentConfig& c) { return std::to_string(c.*m); };
  }
  return f;
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      field("task", &C::task),
      field("algorithm", &C::algorithm),
      field("seed", &C::seed),
      field("out", &C::out),
      field("workers", &C::workers),
      field("strict_paper", &C::strict_paper),
      field("data.train", &C::train_path),
      field("data.test", &C::test_path),
      field("data.format", &C::format),
      field("data.dim", &C::dim),
      field("data.center", &C::center),
      field("data.synthetic", &C::synthetic),
      field("data.synthetic_n", &C::synthetic_n),
      field("data.synthetic_test_n", &C::synthetic_test_n),
      field("data.synthetic_noise", &C::synthetic_noise),
      field("data.synthetic_margin", &C::synthetic_margin),
      field("data.synthetic_dim", &C::synthetic_dim),
      field("model.K", &C::K),
      field("model.prior", &C::prior),
      field("model.kappa", &C::kappa),
      field("model.magnitude_shape", &C::magnitude_shape),
      field("model.magnitude_rate", &C::magnitude_rate),
      field("model.lambda_expert", &C::lambda_expert),
      field("model.lambda_gate", &C::lambda_gate),
      field("model.variance_weight", &C::variance_weight),
      field("vi.max_sweeps", &C::vi_max_sweeps),
      field("vi.tolerance", &C::vi_tolerance),
      field("vi.patience", &C::vi_patience),
      field("vi.kappa_hat_init", &C::vi_kappa_hat_init),
      field("vi.learn_kappa_hat", &C::vi_learn_kappa_hat),
      field("vi.restarts", &C::vi_restarts),
      field("vi.paper_area", &C::vi_paper_area),
      field("mh.burn_in", &C::mh_burn_in),
      field("mh.samples", &C::mh_samples),
      field("mh.thin", &C::mh_thin),
      field("mh.direction_kappa", &C::mh_direction_kappa),
      field("mh.magnitude_sigma", &C::mh_magnitude_sigma),
      field("mh.chains", &C::mh_chains),
      field("mh.adapt", &C::mh_adapt),
      field("ilfm.alpha", &C::alpha),
      field("ilfm.noise_variance", &C::noise_rule),
      field("ilfm.resample_noise", &C::resample_noise),
      field("ilfm.noise_prior_shape", &C::noise_prior_shape),
      field("ilfm.noise_prior_rate", &C::noise_prior_rate),
      field("ilfm.sweeps", &C::ilfm_sweeps),
      field("ilfm.burn_in", &C::ilfm_burn_in),
      field("ilfm.thin", &C::ilfm_thin),
      field("ilfm.init_features", &C::ilfm_init_features),
      field("ilfm.ghmc_step", &C::ghmc_step),
      field("ilfm.ghmc_steps", &C::ghmc_steps),
      field("ilfm.ghmc_adapt", &C::ghmc_adapt),
      field("ilfm.magnitude_steps", &C::magnitude_steps),
      field("ilfm.magnitude_proposal", &C::magnitude_proposal),
      field("ilfm.checkpoint_every", &C::checkpoint_every),
      field("ilfm.resume", &C::resume),
      field("eval.checkpoint", &C::checkpoint),
      field("eval.baseline_checkpoint", &C::baseline_checkpoint),
      field("eval.patterns", &C::patterns_path),
      field("eval.labels", &C::labels_path),
      field("eval.precision_k", &C::precision_k),
      field("eval.clusters", &C::clusters),
  };
  return table;
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.key);
  return k;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void ExperimentConfig::validate() const {
  if (!one_of(task, {"train-bmem", "train-ilfm", "eval", "sample-prior", "diagnose"}))
    throw ConfigError("task: expected train-bmem, train-ilfm, eval, sample-prior or diagnose, got '" + task + "'");
  if (task == "train-bmem" && !one_of(algorithm, {"vi", "mh", "pr"}))
    throw ConfigError("algorithm: train-bmem needs vi, mh or pr, got '" + algorithm + "'");
  if (task == "train-ilfm" && !(algorithm.empty() || algorithm == "gibbs"))
    throw ConfigError("algorithm: train-ilfm only supports gibbs, got '" + algorithm + "'");
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  if (out.empty()) throw ConfigError("out: must not be empty");
  if (!one_of(format, {"sparse-labeled", "dense-labeled", "dense-matrix"})) throw ConfigError("data.format: unknown format '" + format + "'");
  if (!synthetic.empty() && !one_of(synthetic, {"xor", "separable", "blocks"}))
    throw ConfigError("data.synthetic: expected xor, separable or blocks, got '" + synthetic + "'");
  if (synthetic_n < 1 || synthetic_test_n < 0) throw ConfigError("data.synthetic_n: must be positive");
  if (synthetic_noise < 0.0 || synthetic_margin < 0.0 || synthetic_dim < 2) throw ConfigError("data.synthetic_*: out of range");
  if (task == "train-bmem" || task == "train-ilfm") {
    if (train_path.empty() && synthetic.empty()) throw ConfigError("data.train or data.synthetic is required for " + task);
    if (task == "train-bmem" && synthetic == "blocks") throw ConfigError("data.synthetic: blocks data is unlabeled");
    if (task == "train-ilfm" && (synthetic == "xor" || synthetic == "separable"))
      throw ConfigError("data.synthetic: train-ilfm needs blocks or a data file");
  }
  if ((task == "eval" || task == "diagnose") && checkpoint.empty()) throw ConfigError("eval.checkpoint is required for " + task);
  if (task == "eval" && test_path.empty() && synthetic.empty()) throw ConfigError("data.test or data.synthetic is required for eval");
  if (K < 1) throw ConfigError("model.K: must be >= 1");
  if (!one_of(prior, {"mabn", "independent", "iid"})) throw ConfigError("model.prior: unknown prior '" + prior + "'");
  if (kappa < 0.0) throw ConfigError("model.kappa: must be >= 0");
  if (!(magnitude_shape > 0.0) || !(magnitude_rate > 0.0)) throw ConfigError("model.magnitude_*: must be positive");
  if (lambda_expert < 0.0 || lambda_gate < 0.0) throw ConfigError("model.lambda_*: must be >= 0");
  if (vi_max_sweeps < 1 || vi_patience < 1 || vi_restarts < 1 || !(vi_tolerance > 0.0) || !(vi_kappa_hat_init > 0.0))
    throw ConfigError("vi.*: out of range");
  if (mh_burn_in < 0 || mh_samples < 1 || mh_thin < 1 || mh_chains < 1 || !(mh_direction_kappa > 0.0) ||
      !(mh_magnitude_sigma > 0.0))
    throw ConfigError("mh.*: out of range");
  if (!(alpha > 0.0)) throw ConfigError("ilfm.alpha: must be positive");
  if (noise_rule != "auto" && !(parse_double("ilfm.noise_variance", noise_rule) > 0.0))
    throw ConfigError("ilfm.noise_variance: must be auto or a positive number");
  if (!(noise_prior_shape > 0.0) || !(noise_prior_rate > 0.0)) throw ConfigError("ilfm.noise_prior_*: must be positive");
  if (ilfm_sweeps < 1 || ilfm_burn_in < 0 || ilfm_burn_in > ilfm_sweeps || ilfm_thin < 1 || ilfm_init_features < 0)
    throw ConfigError("ilfm sweeps: need sweeps >= 1, 0 <= burn_in <= sweeps, thin >= 1");
  if (!(ghmc_step > 0.0) || ghmc_steps < 1) throw ConfigError("ilfm.ghmc_*: out of range");
  if (magnitude_steps < 0 || !(magnitude_proposal > 0.0)) throw ConfigError("ilfm.magnitude_*: out of range");
  if (checkpoint_every < 0) throw ConfigError("ilfm.checkpoint_every: must be >= 0");
  if (precision_k < 0 || clusters < 0) throw ConfigError("eval.precision_k and eval.clusters must be >= 0");
}

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig c;
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(no) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

void write_config(std::ostream& os, const ExperimentConfig& c) {
  for (const auto& [k, v] : c.entries()) os << k << " = " << v << '\n';
}

std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  write_config(os, c);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace divbayes
