#include "divbayes/experiment.hpp"

#include "divbayes/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef DIVBAYES_VERSION
#define DIVBAYES_VERSION "0.0.0"
#endif

namespace divbayes {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* library_version() { return DIVBAYES_VERSION; }

// ---------------------------------------------------------------- checkpoints

void write_bmem_checkpoint(std::ostream& os, const BmemCheckpoint& cp) {
  require(!cp.models.empty(), "write_bmem_checkpoint: no models");
  const auto& m0 = cp.models.front();
  os << "divbayes-bmem 1\n"
     << "K " << m0.num_experts() << " p " << m0.experts.dim() << " fitter " << cp.fitter << " seed " << cp.seed
     << " sweeps " << cp.sweeps << " models " << cp.models.size() << '\n';
  for (const auto& m : cp.models) {
    write_component_set(os, m.experts);
    write_component_set(os, m.gates);
  }
}

BmemCheckpoint read_bmem_checkpoint(std::istream& is) {
  std::string magic, kk, pk, fk, sk, wk, mk;
  int version = 0, K = 0, p = 0;
  std::size_t M = 0;
  BmemCheckpoint cp;
  if (!(is >> magic >> version) || magic != "divbayes-bmem" || version != 1) throw DataError("bmem checkpoint: bad header");
  if (!(is >> kk >> K >> pk >> p >> fk >> cp.fitter >> sk >> cp.seed >> wk >> cp.sweeps >> mk >> M) || kk != "K" ||
      pk != "p" || fk != "fitter" || sk != "seed" || wk != "sweeps" || mk != "models" || K < 1 || p < 2 || M < 1)
    throw DataError("bmem checkpoint: bad description line");
  for (std::size_t i = 0; i < M; ++i) {
    BmemModel m{read_component_set(is), read_component_set(is)};
    if (m.num_experts() != K || m.experts.dim() != p || static_cast<int>(m.gates.size()) != K || m.gates.dim() != p)
      throw DataError("bmem checkpoint: model " + std::to_string(i) + " does not match K and p");
    cp.models.push_back(std::move(m));
  }
  return cp;
}

void write_ilfm_checkpoint(std::ostream& os, const IlfmCheckpoint& cp) {
  os << "divbayes-ilfm-checkpoint 1\n";
  os << "seed " << cp.seed << " sweep " << cp.sweep << " ghmc_step " << std::setprecision(17) << cp.ghmc_step
     << " window " << cp.window_accepted << ' ' << cp.window_attempted << '\n';
  os << "kept " << cp.kept_active.size();
  for (int k : cp.kept_active) os << ' ' << k;
  os << '\n' << cp.rng_state << '\n';
  write_ilfm_state(os, cp.state);
}

IlfmCheckpoint read_ilfm_checkpoint(std::istream& is) {
  std::string magic, a, b, c, d, e;
  int version = 0;
  IlfmCheckpoint cp;
  if (!(is >> magic >> version) || magic != "divbayes-ilfm-checkpoint" || version != 1)
    throw DataError("ilfm checkpoint: bad header");
  if (!(is >> a >> cp.seed >> b >> cp.sweep >> c >> cp.ghmc_step >> d >> cp.window_accepted >> cp.window_attempted) ||
      a != "seed" || b != "sweep" || c != "ghmc_step" || d != "window" || cp.sweep < 0 || !(cp.ghmc_step > 0.0))
    throw DataError("ilfm checkpoint: bad progress line");
  std::size_t n = 0;
  if (!(is >> e >> n) || e != "kept") throw DataError("ilfm checkpoint: bad kept line");
  cp.kept_active.resize(n);
  for (auto& k : cp.kept_active)
    if (!(is >> k)) throw DataError("ilfm checkpoint: truncated kept line");
  is >> std::ws;
  if (!std::getline(is, cp.rng_state) || cp.rng_state.empty()) throw DataError("ilfm checkpoint: missing rng state");
  cp.state = read_ilfm_state(is);
  return cp;
}

std::string checkpoint_kind(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string tok;
  in >> tok;
  if (tok == "divbayes-bmem") return "bmem";
  if (tok == "divbayes-ilfm-checkpoint") return "ilfm";
  return "";
}

std::vector<double> template_recovery(const Matrix& templates, const Matrix& features) {
  const int T = static_cast<int>(templates.rows());
  const int F = static_cast<int>(features.rows());
  std::vector<double> out(T, 0.0);
  if (F == 0) return out;
  require(templates.cols() == features.cols(), "template_recovery: dimension mismatch");
  const int S = std::max(T, F);
  Matrix cost = Matrix::Zero(S, S);
  Matrix cosine = Matrix::Zero(T, F);
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f) {
      const double den = templates.row(t).norm() * features.row(f).norm();
      cosine(t, f) = den > 0.0 ? std::abs(templates.row(t).dot(features.row(f))) / den : 0.0;
      cost(t, f) = -cosine(t, f);
    }
  const auto match = hungarian_assignment(cost);
  for (int t = 0; t < T; ++t)
    if (match[t] < F) out[t] = cosine(t, match[t]);
  return out;
}

// ---------------------------------------------------------------- helpers

namespace {

struct Run {
  const ExperimentConfig& cfg;
  fs::path dir;
  std::ofstream metrics;
  std::ostringstream summary;

  explicit Run(const ExperimentConfig& c) : cfg(c), dir(c.out) {}

  void open_metrics(bool append) {
    metrics.open(dir / "metrics.jsonl", append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw DataError("cannot write " + (dir / "metrics.jsonl").string());
  }
  void emit(const json& j) { metrics << j.dump() << '\n'; }
};

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

template <class F>
void write_with(const fs::path& p, F&& f) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    f(out);
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::vector<Vector> directions_of(const ComponentSet& s) {
  std::vector<Vector> v;
  for (std::size_t k = 0; k < s.size(); ++k) v.push_back(s.direction(k).coords());
  return v;
}

std::vector<Vector> rows_of(const Matrix& m) {
  std::vector<Vector> v;
  for (Eigen::Index i = 0; i < m.rows(); ++i) v.push_back(m.row(i).transpose());
  return v;
}

json angle_json(const std::vector<Vector>& v, double variance_weight) {
  json j;
  j["count"] = v.size();
  if (v.size() < 2) {
    j["mean"] = nullptr;
    j["variance"] = nullptr;
    j["regularizer"] = nullptr;
    return j;
  }
  const auto s = pairwise_angle_stats(v);
  j["mean"] = s.mean;
  j["variance"] = s.variance;
  j["regularizer"] = mutual_angular_regularizer(v, variance_weight);
  return j;
}

std::string angle_line(const std::string& name, const json& a) {
  std::ostringstream os;
  os << name << ": " << a["count"].get<std::size_t>() << " components";
  if (!a["mean"].is_null())
    os << ", mean pairwise angle " << a["mean"].get<double>() << ", variance " << a["variance"].get<double>()
       << ", regularizer " << a["regularizer"].get<double>();
  os << '\n';
  return os.str();
}

double accuracy_of(const std::vector<double>& prob, const std::vector<int>& labels) {
  std::vector<int> pred(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) pred[i] = prob[i] > 0.5 ? 1 : 0;
  return classification_accuracy(pred, labels);
}

constexpr std::uint64_t kTestSeedOffset = 1000003;

LabeledDataset load_labeled(const ExperimentConfig& c, const std::string& path, int dim) {
  if (c.format == "sparse-labeled") return load_sparse_labeled(path, dim);
  if (c.format == "dense-labeled") return load_dense_labeled(path);
  throw ConfigError("data.format: " + c.format + " has no labels");
}

std::pair<LabeledDataset, LabeledDataset> bmem_data(const ExperimentConfig& c) {
  LabeledDataset train, test;
  if (!c.train_path.empty()) {
    train = load_labeled(c, c.train_path, c.dim);
    if (!c.test_path.empty()) test = load_labeled(c, c.test_path, train.dim());
  } else if (c.synthetic == "xor") {
    train = generate_xor_experts(c.synthetic_n, c.seed, c.synthetic_margin);
    if (c.synthetic_test_n > 0) test = generate_xor_experts(c.synthetic_test_n, c.seed + kTestSeedOffset, c.synthetic_margin);
  } else {
    train = generate_separable(c.synthetic_n, c.synthetic_dim, c.seed, c.synthetic_margin);
    if (c.synthetic_test_n > 0)
      test = generate_separable(c.synthetic_test_n, c.synthetic_dim, c.seed + kTestSeedOffset, c.synthetic_margin, c.seed);
  }
  if (train.size() == 0) throw DataError("training data is empty");
  if (c.center) {
    const Vector mu = center_columns(train.features);
    if (test.size()) test.features.rowwise() -= mu.transpose();
  }
  return {train, test};
}

struct IlfmData {
  Matrix train;
  Matrix heldout;
  Matrix templates;  // blocks only
};

IlfmData ilfm_data(const ExperimentConfig& c) {
  IlfmData d;
  if (!c.train_path.empty()) {
    d.train = load_dense_matrix(c.train_path);
    if (!c.test_path.empty()) d.heldout = load_dense_matrix(c.test_path);
  } else {
    const auto b = generate_blocks(c.synthetic_n, c.synthetic_noise, c.seed);
    d.train = b.data.examples;
    d.templates = b.templates;
    if (c.synthetic_test_n > 0)
      d.heldout = generate_blocks(c.synthetic_test_n, c.synthetic_noise, c.seed + kTestSeedOffset).data.examples;
  }
  if (d.train.rows() == 0) throw DataError("training data is empty");
  if (d.heldout.size() && d.heldout.cols() != d.train.cols()) throw DataError("held-out data dimension differs from training data");
  if (c.center) {
    const Vector mu = center_columns(d.train);
    if (d.heldout.size()) d.heldout.rowwise() -= mu.transpose();
  }
  return d;
}

IlfmConfig ilfm_config(const ExperimentConfig& c, const Matrix& X) {
  IlfmConfig ic;
  ic.kappa = c.kappa;
  ic.alpha = c.alpha;
  ic.magnitude_shape = c.magnitude_shape;
  ic.magnitude_rate = c.magnitude_rate;
  ic.noise_variance = c.noise_rule == "auto" ? default_noise_variance(X) : std::stod(c.noise_rule);
  ic.resample_noise = c.resample_noise;
  ic.noise_prior_shape = c.noise_prior_shape;
  ic.noise_prior_rate = c.noise_prior_rate;
  ic.ghmc.step_size = c.ghmc_step;
  ic.ghmc.leapfrog_steps = c.ghmc_steps;
  ic.ghmc.strict_paper = c.strict_paper;
  ic.magnitude_steps = c.magnitude_steps;
  ic.magnitude_proposal = c.magnitude_proposal;
  ic.strict_paper = c.strict_paper;
  ic.validate();
  return ic;
}

Allocation active_columns(const IlfmState& st) {
  const auto m = st.column_counts();
  std::vector<int> idx;
  for (int k = 0; k < st.represented(); ++k)
    if (m[k] > 0) idx.push_back(k);
  Allocation Z(st.num_examples(), static_cast<int>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) Z.col(static_cast<Eigen::Index>(i)) = st.Z.col(idx[i]);
  return Z;
}

double median(std::vector<int> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- tasks

void sample_prior_task(Run& run) {
  const auto& c = run.cfg;
  const int p = c.dim > 0 ? c.dim : c.synthetic_dim;
  if (p < 2) throw ConfigError("data.dim: sample-prior needs a dimension >= 2");
  const MabnHyper hyper(UnitVector::axis(p, 0), c.kappa, GammaParams(c.magnitude_shape, c.magnitude_rate));
  Rng rng(c.seed);
  ComponentSet set(p);
  if (c.prior == "mabn") {
    set = sample_mabn(c.K, hyper, rng);
  } else if (c.prior == "iid" || c.prior == "independent") {
    for (int k = 0; k < c.K; ++k) {
      auto dir = c.kappa > 0.0 ? vmf_sample(VmfParams(hyper.base_direction, c.kappa), rng) : uniform_sphere_sample(p, rng);
      set.push_back(std::move(dir), gamma_sample(hyper.magnitude, rng));
    }
  }
  write_with(run.dir / "prior_sample.txt", [&](std::ostream& os) { write_component_set(os, set); });
  const auto a = angle_json(directions_of(set), c.variance_weight);
  run.emit({{"components", c.K}, {"dim", p}, {"angles", a}});
  run.summary << "sample-prior: " << c.K << " components in dimension " << p << " (" << c.prior << ", kappa "
              << c.kappa << ")\n"
              << angle_line("directions", a);
}

void train_bmem_task(Run& run) {
  const auto& c = run.cfg;
  auto [train, test] = bmem_data(c);
  const BmemHyper hyper = make_bmem_hyper(train.dim(), c.kappa, c.magnitude_shape, c.magnitude_rate);
  const PriorForm prior = c.prior == "independent" ? PriorForm::Independent : PriorForm::Mabn;
  BmemCheckpoint cp;
  cp.fitter = c.algorithm;
  cp.seed = c.seed;
  json fit_info;
  const auto t0 = std::chrono::steady_clock::now();
  if (c.algorithm == "vi" || c.algorithm == "pr") {
    ViConfig vc;
    vc.max_sweeps = c.vi_max_sweeps;
    vc.tolerance = c.vi_tolerance;
    vc.patience = c.vi_patience;
    vc.kappa_hat_init = c.vi_kappa_hat_init;
    vc.learn_kappa_hat = c.vi_learn_kappa_hat;
    vc.restarts = c.vi_restarts;
    vc.paper_area = c.vi_paper_area;
    vc.seed = c.seed;
    vc.variance_weight = c.variance_weight;
    const ViResult r = c.algorithm == "vi" ? bmem_vi_fit(train, c.K, hyper, vc, prior)
                                           : bmem_pr_fit(train, c.K, hyper, c.lambda_expert, c.lambda_gate, vc);
    for (std::size_t s = 0; s < r.trace.objective.size(); ++s)
      run.emit({{"sweep", s}, {"objective", r.trace.objective[s]}});
    cp.sweeps = r.trace.sweeps;
    cp.models.push_back(r.state.plug_in_model());
    fit_info = {{"sweeps", r.trace.sweeps},
                {"converged", r.trace.converged},
                {"final_objective", r.trace.objective.back()},
                {"max_decrease", r.trace.max_decrease},
                {"kappa_hat", r.state.kappa_hat}};
  } else {
    MhConfig mc;
    mc.burn_in = c.mh_burn_in;
    mc.num_samples = c.mh_samples;
    mc.thin = c.mh_thin;
    mc.direction_kappa = c.mh_direction_kappa;
    mc.magnitude_sigma = c.mh_magnitude_sigma;
    mc.adapt_during_burn_in = c.mh_adapt;
    mc.seed = c.seed;
    mc.chains = c.mh_chains;
    mc.workers = c.workers;
    const MhResult r = bmem_mh_fit(train, c.K, hyper, mc);
    for (std::size_t s = 0; s < r.log_target.size(); ++s) run.emit({{"sample", s}, {"log_target", r.log_target[s]}});
    cp.sweeps = c.mh_burn_in + c.mh_samples * c.mh_thin;
    cp.models = r.samples;
    fit_info = {{"samples", r.samples.size()},
                {"direction_acceptance", r.diagnostics.direction_acceptance},
                {"magnitude_acceptance", r.diagnostics.magnitude_acceptance},
                {"final_direction_kappa", r.diagnostics.final_direction_kappa},
                {"final_magnitude_sigma", r.diagnostics.final_magnitude_sigma},
                {"warnings", r.diagnostics.warnings}};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_with(run.dir / "model.ckpt", [&](std::ostream& os) { write_bmem_checkpoint(os, cp); });

  const double train_acc = accuracy_of(bmem_predict_all(train.features, cp.models), train.labels);
  json res = {{"fitter", c.algorithm}, {"train_accuracy", train_acc}, {"seconds", seconds}, {"fit", fit_info}};
  if (test.size()) res["test_accuracy"] = accuracy_of(bmem_predict_all(test.features, cp.models), test.labels);
  const BmemModel& last = cp.models.back();
  res["expert_angles"] = angle_json(directions_of(last.experts), c.variance_weight);
  res["gate_angles"] = angle_json(directions_of(last.gates), c.variance_weight);
  run.emit({{"result", res}});

  auto& s = run.summary;
  s << "train-bmem (" << c.algorithm << "), K = " << c.K << ", " << train.size() << " training examples in dimension "
    << train.dim() << '\n';
  s << "fit: " << fit_info.dump() << '\n';
  s << "train accuracy " << train_acc << '\n';
  if (res.contains("test_accuracy")) s << "test accuracy " << res["test_accuracy"].get<double>() << '\n';
  s << angle_line("experts", res["expert_angles"]) << angle_line("gates", res["gate_angles"]);
  if (c.algorithm == "mh") s << "(angles of the last stored sample)\n";
  s << "seconds " << seconds << '\n';
}

void train_ilfm_task(Run& run) {
  const auto& c = run.cfg;
  const IlfmData data = ilfm_data(c);
  const Matrix& X = data.train;
  IlfmConfig ic = ilfm_config(c, X);

  IlfmCheckpoint cp;
  Rng rng(c.seed);
  const bool resuming = !c.resume.empty();
  if (resuming) {
    std::ifstream in(c.resume);
    if (!in) throw DataError("cannot open resume checkpoint '" + c.resume + "'");
    cp = read_ilfm_checkpoint(in);
    if (cp.state.num_examples() != X.rows() || cp.state.features.dim() != X.cols())
      throw DataError("resume checkpoint does not match the data shape");
    std::istringstream rs(cp.rng_state);
    rs >> rng;
    if (!rs) throw DataError("resume checkpoint: bad rng state");
  } else {
    cp.seed = c.seed;
    cp.ghmc_step = c.ghmc_step;
    cp.state = ilfm_data_initial_state(X, c.ilfm_init_features, ic, rng);
  }
  run.open_metrics(resuming);
  IlfmState& st = cp.state;
  constexpr int kWindow = 20;
  int total_acc = 0, total_att = 0, mag_acc = 0, mag_att = 0, fallbacks = 0;
  const auto t0 = std::chrono::steady_clock::now();

  const auto save = [&](const fs::path& p) {
    std::ostringstream rs;
    rs << rng;
    cp.rng_state = rs.str();
    write_with(p, [&](std::ostream& os) { write_ilfm_checkpoint(os, cp); });
  };

  for (int sweep = cp.sweep; sweep < c.ilfm_sweeps; ++sweep) {
    ic.ghmc.step_size = cp.ghmc_step;
    const SweepStats stats = ilfm_gibbs_sweep(st, X, ic, rng);
    cp.window_accepted += stats.ghmc_accepted;
    cp.window_attempted += stats.ghmc_attempted;
    total_acc += stats.ghmc_accepted;
    total_att += stats.ghmc_attempted;
    mag_acc += stats.magnitude_accepted;
    mag_att += stats.magnitude_attempted;
    fallbacks += stats.ars_fallbacks;
    if ((sweep + 1) % kWindow == 0) {
      if (c.ghmc_adapt && sweep < c.ilfm_burn_in && cp.window_attempted > 0) {
        const double rate = static_cast<double>(cp.window_accepted) / cp.window_attempted;
        if (rate < 0.6) cp.ghmc_step *= 0.7;
        if (rate > 0.9) cp.ghmc_step *= 1.3;
        cp.ghmc_step = std::clamp(cp.ghmc_step, 1e-5, 1.0);
      }
      cp.window_accepted = 0;
      cp.window_attempted = 0;
    }
    cp.sweep = sweep + 1;
    if (sweep >= c.ilfm_burn_in && (sweep - c.ilfm_burn_in) % c.ilfm_thin == 0) cp.kept_active.push_back(st.num_active());

    const auto m = ilfm_metrics(st, X, active_columns(st));
    json line = {{"sweep", sweep},
                 {"k_active", st.num_active()},
                 {"l2_error", m.l2_error},
                 {"log_likelihood", m.log_likelihood},
                 {"mean_pairwise_angle", nan_to_null(mean_pairwise_feature_angle(st))},
                 {"noise_variance", st.noise_variance},
                 {"ghmc_step", cp.ghmc_step}};
    if (!stats.events.empty()) line["events"] = stats.events;
    run.emit(line);
    if (c.checkpoint_every > 0 && cp.sweep % c.checkpoint_every == 0) save(run.dir / "checkpoint.ckpt");
  }
  save(run.dir / "checkpoint.ckpt");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const Matrix W = active_feature_matrix(st);
  const auto mtrain = ilfm_metrics(st, X, active_columns(st));
  json res = {{"k_active", st.num_active()},
              {"k_active_median", nan_to_null(median(cp.kept_active))},
              {"retained_samples", cp.kept_active.size()},
              {"train_l2_error", mtrain.l2_error},
              {"train_log_likelihood", mtrain.log_likelihood},
              {"noise_variance", st.noise_variance},
              {"ghmc_step", cp.ghmc_step},
              {"ghmc_acceptance", total_att ? json(static_cast<double>(total_acc) / total_att) : json(nullptr)},
              {"magnitude_acceptance", mag_att ? json(static_cast<double>(mag_acc) / mag_att) : json(nullptr)},
              {"ars_fallbacks", fallbacks},
              {"seconds", seconds},
              {"feature_angles", angle_json(rows_of(W), c.variance_weight)}};
  if (data.heldout.size()) {
    Rng hr(c.seed + kTestSeedOffset);
    const Allocation Zh = infer_allocations(st, data.heldout, ic, hr);
    const auto mh = ilfm_metrics(st, data.heldout, Zh);
    res["heldout_l2_error"] = mh.l2_error;
    res["heldout_log_likelihood"] = mh.log_likelihood;
  }
  if (data.templates.size()) {
    res["template_cosines"] = template_recovery(data.templates, W);
    res["noise_floor_l2"] = c.synthetic_noise * std::sqrt(static_cast<double>(X.cols()));
  }
  run.emit({{"result", res}});

  auto& s = run.summary;
  s << "train-ilfm (gibbs), " << X.rows() << " examples in dimension " << X.cols() << ", " << c.ilfm_sweeps
    << " sweeps (burn-in " << c.ilfm_burn_in << ")\n";
  s << "active features " << st.num_active() << ", posterior median " << res["k_active_median"].dump() << " over "
    << cp.kept_active.size() << " retained samples\n";
  s << "train L2 " << mtrain.l2_error << ", noise variance " << st.noise_variance << '\n';
  if (res.contains("heldout_l2_error"))
    s << "held-out L2 " << res["heldout_l2_error"].get<double>() << ", log-likelihood "
      << res["heldout_log_likelihood"].get<double>() << '\n';
  if (res.contains("template_cosines"))
    s << "template cosines " << res["template_cosines"].dump() << " (noise floor L2 "
      << res["noise_floor_l2"].get<double>() << ")\n";
  s << "GHMC step " << cp.ghmc_step << ", acceptance " << res["ghmc_acceptance"].dump() << '\n';
  s << angle_line("features", res["feature_angles"]);
  s << "seconds " << seconds << '\n';
}

std::vector<int> read_int_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<int> v;
  std::string tok;
  int line = 0;
  while (in >> tok) {
    ++line;
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw DataError(path + ": entry " + std::to_string(line) + " is not an integer");
    }
  }
  return v;
}

BmemCheckpoint load_bmem_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_bmem_checkpoint(in);
}

IlfmCheckpoint load_ilfm_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_ilfm_checkpoint(in);
}

void eval_task(Run& run) {
  const auto& c = run.cfg;
  const std::string kind = checkpoint_kind(c.checkpoint);
  auto& s = run.summary;
  if (kind == "bmem") {
    const auto cp = load_bmem_checkpoint(c.checkpoint);
    const int p = cp.models.front().experts.dim();
    LabeledDataset test;
    if (!c.test_path.empty()) {
      test = load_labeled(c, c.test_path, c.format == "sparse-labeled" ? p : 0);
    } else if (c.synthetic == "xor") {
      test = generate_xor_experts(c.synthetic_test_n, c.seed + kTestSeedOffset, c.synthetic_margin);
    } else {
      test = generate_separable(c.synthetic_test_n, c.synthetic_dim, c.seed + kTestSeedOffset, c.synthetic_margin, c.seed);
    }
    if (test.dim() != p) throw DataError("test data dimension " + std::to_string(test.dim()) + " differs from the model's " + std::to_string(p));
    const auto prob = bmem_predict_all(test.features, cp.models);
    std::vector<bool> correct(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) correct[i] = (prob[i] > 0.5) == (test.labels[i] == 1);
    const double acc = accuracy_of(prob, test.labels);
    json res = {{"model", "bmem"}, {"fitter", cp.fitter}, {"examples", test.size()}, {"accuracy", acc}};
    s << "eval: bmem (" << cp.fitter << ") on " << test.size() << " examples, accuracy " << acc << '\n';
    if (!c.patterns_path.empty()) {
      const auto ids = read_int_column(c.patterns_path);
      if (static_cast<int>(ids.size()) != test.size()) throw DataError("eval.patterns: need one pattern id per test example");
      std::vector<bool> base_correct;
      const std::vector<bool>* base = nullptr;
      if (!c.baseline_checkpoint.empty()) {
        const auto bcp = load_bmem_checkpoint(c.baseline_checkpoint);
        const auto bp = bmem_predict_all(test.features, bcp.models);
        base_correct.resize(bp.size());
        for (std::size_t i = 0; i < bp.size(); ++i) base_correct[i] = (bp[i] > 0.5) == (test.labels[i] == 1);
        base = &base_correct;
      }
      const auto rows = per_pattern_report(correct, ids, {}, base);
      write_with(run.dir / "pattern_report.csv", [&](std::ostream& os) { write_pattern_report_csv(os, rows); });
      json jr = json::array();
      for (const auto& r : rows) {
        json row = {{"pattern", r.pattern}, {"count", r.count}, {"accuracy", r.accuracy}};
        if (r.baseline_accuracy) row["baseline_accuracy"] = *r.baseline_accuracy;
        if (base) row["relative_improvement_pct"] = r.improvement ? json(*r.improvement) : json("undefined");
        jr.push_back(row);
      }
      res["patterns"] = jr;
      s << "per-pattern report: " << rows.size() << " patterns written to pattern_report.csv\n";
    }
    run.emit({{"result", res}});
    write_text(run.dir / "eval.json", res.dump(2) + "\n");
    return;
  }
  if (kind == "ilfm") {
    const auto cp = load_ilfm_checkpoint(c.checkpoint);
    IlfmData data;
    std::vector<int> labels;
    if (!c.test_path.empty()) {
      data.heldout = load_dense_matrix(c.test_path);
    } else if (c.synthetic == "blocks") {
      const auto b = generate_blocks(c.synthetic_test_n, c.synthetic_noise, c.seed + kTestSeedOffset);
      data.heldout = b.data.examples;
      // presence pattern as a class id
      for (Eigen::Index n = 0; n < b.presence.rows(); ++n) {
        int id = 0;
        for (Eigen::Index j = 0; j < b.presence.cols(); ++j) id = 2 * id + b.presence(n, j);
        labels.push_back(id);
      }
    } else {
      throw ConfigError("eval of an ilfm checkpoint needs data.test or data.synthetic = blocks");
    }
    if (data.heldout.cols() != cp.state.features.dim()) throw DataError("held-out data dimension differs from the model");
    IlfmConfig ic = ilfm_config(c, data.heldout);
    Rng hr(c.seed + kTestSeedOffset);
    const Allocation Z = infer_allocations(cp.state, data.heldout, ic, hr);
    const auto m = ilfm_metrics(cp.state, data.heldout, Z);
    json res = {{"model", "ilfm"}, {"examples", data.heldout.rows()}, {"k_active", cp.state.num_active()},
                {"l2_error", m.l2_error}, {"log_likelihood", m.log_likelihood}};
    s << "eval: ilfm with " << cp.state.num_active() << " active features on " << data.heldout.rows()
      << " examples, L2 " << m.l2_error << ", log-likelihood " << m.log_likelihood << '\n';
    if (!c.labels_path.empty()) labels = read_int_column(c.labels_path);
    if (c.clusters > 0 || c.precision_k > 0) {
      if (labels.empty()) throw ConfigError("eval.labels is required for clustering and precision@k on file data");
      if (static_cast<Eigen::Index>(labels.size()) != data.heldout.rows()) throw DataError("eval.labels: need one label per example");
      const Matrix R = Z.cast<double>();
      if (c.clusters > 0) {
        if (R.cols() == 0) throw DataError("eval.clusters: the model has no active features");
        const auto km = kmeans(R, c.clusters, c.seed);
        const auto cs = clustering_metrics(km.labels, labels);
        res["clustering_accuracy"] = cs.accuracy;
        res["nmi"] = cs.nmi;
        s << "k-means (" << c.clusters << " clusters): accuracy " << cs.accuracy << ", NMI " << cs.nmi << '\n';
      }
      if (c.precision_k > 0) {
        // first half queries the second half
        const Eigen::Index h = R.rows() / 2;
        const std::vector<int> ql(labels.begin(), labels.begin() + h), cl(labels.begin() + h, labels.end());
        const auto pk = precision_at_k(R.topRows(h), R.bottomRows(R.rows() - h), ql, cl, c.precision_k);
        res["precision_at_k"] = pk.mean;
        s << "precision@" << c.precision_k << " " << pk.mean << '\n';
      }
    }
    run.emit({{"result", res}});
    write_text(run.dir / "eval.json", res.dump(2) + "\n");
    return;
  }
  throw DataError("eval.checkpoint: unrecognized checkpoint '" + c.checkpoint + "'");
}

void diagnose_task(Run& run) {
  const auto& c = run.cfg;
  const std::string kind = checkpoint_kind(c.checkpoint);
  json res;
  auto& s = run.summary;
  if (kind == "bmem") {
    const auto cp = load_bmem_checkpoint(c.checkpoint);
    const auto& m = cp.models.back();
    res = {{"model", "bmem"},
           {"fitter", cp.fitter},
           {"seed", cp.seed},
           {"sweeps", cp.sweeps},
           {"models", cp.models.size()},
           {"expert_angles", angle_json(directions_of(m.experts), c.variance_weight)},
           {"gate_angles", angle_json(directions_of(m.gates), c.variance_weight)}};
    s << "diagnose: bmem checkpoint (" << cp.fitter << ", " << cp.models.size() << " stored models)\n"
      << angle_line("experts", res["expert_angles"]) << angle_line("gates", res["gate_angles"]);
  } else if (kind == "ilfm") {
    const auto cp = load_ilfm_checkpoint(c.checkpoint);
    res = {{"model", "ilfm"},
           {"sweep", cp.sweep},
           {"k_active", cp.state.num_active()},
           {"represented", cp.state.represented()},
           {"feature_angles", angle_json(rows_of(active_feature_matrix(cp.state)), c.variance_weight)}};
    s << "diagnose: ilfm checkpoint after " << cp.sweep << " sweeps, " << cp.state.num_active() << " active features\n"
      << angle_line("features", res["feature_angles"]);
  } else {
    throw DataError("eval.checkpoint: unrecognized checkpoint '" + c.checkpoint + "'");
  }
  run.emit({{"result", res}});
  write_text(run.dir / "diagnose.json", res.dump(2) + "\n");
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
  ExperimentOutcome out;
  fs::path dir;
  const auto fail = [&](int code, const char* kind, const std::string& msg) {
    out.exit_code = code;
    out.error_kind = kind;
    out.message = msg;
    if (!dir.empty()) {
      std::error_code ec;
      if (fs::is_directory(dir, ec)) {
        json e = {{"exit_code", code}, {"kind", kind}, {"message", msg}};
        std::ofstream(dir / "error.json") << e.dump(2) << '\n';
      }
    }
    return out;
  };
  try {
    config.validate();
    dir = config.out;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory '" + dir.string() + "'");
    fs::remove(dir / "error.json", ec);
    json manifest = {{"config_hash", config_hash(config)},
                     {"code_version", library_version()},
                     {"seed", config.seed},
                     {"task", config.task}};
    json cj = json::object();
    for (const auto& [k, v] : config.entries()) cj[k] = v;
    manifest["config"] = cj;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    Run run(config);
    if (config.task != "train-ilfm") run.open_metrics(false);
    if (config.task == "sample-prior") sample_prior_task(run);
    else if (config.task == "train-bmem") train_bmem_task(run);
    else if (config.task == "train-ilfm") train_ilfm_task(run);
    else if (config.task == "eval") eval_task(run);
    else diagnose_task(run);
    out.summary = run.summary.str();
    write_text(dir / "summary.txt", out.summary);
    return out;
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const InvalidArgument& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(kExitData, "data", e.what());
  } catch (const NumericalError& e) {
    return fail(kExitNumerical, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, "internal", e.what());
  }
}

}  // namespace divbayes
