#include "divbayes/divbayes.h"

#include "divbayes/experiment.hpp"

#include <cstring>
#include <fstream>
#include <string>

using namespace divbayes;

struct divbayes_config {
  ExperimentConfig value;
};
struct divbayes_bmem_model {
  BmemCheckpoint value;
};
struct divbayes_ilfm_state {
  IlfmState value;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_summary;

divbayes_status fail(divbayes_status s, const std::string& msg) {
  g_error = msg;
  return s;
}

template <class F>
divbayes_status guarded(F&& f) {
  try {
    g_error.clear();
    f();
    return DIVBAYES_OK;
  } catch (const ConfigError& e) {
    return fail(DIVBAYES_ERR_CONFIG, e.what());
  } catch (const InvalidArgument& e) {
    return fail(DIVBAYES_ERR_ARGUMENT, e.what());
  } catch (const DataError& e) {
    return fail(DIVBAYES_ERR_DATA, e.what());
  } catch (const NumericalError& e) {
    return fail(DIVBAYES_ERR_NUMERICAL, e.what());
  } catch (const std::exception& e) {
    return fail(DIVBAYES_ERR_FAILURE, e.what());
  } catch (...) {
    return fail(DIVBAYES_ERR_FAILURE, "unknown error");
  }
}

divbayes_status copy_out(const std::string& s, char* buffer, size_t capacity, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buffer || capacity < s.size() + 1) return fail(DIVBAYES_ERR_BUFFER, "buffer too small");
  std::memcpy(buffer, s.c_str(), s.size() + 1);
  return DIVBAYES_OK;
}

}  // namespace

extern "C" {

const char* divbayes_version(void) { return library_version(); }
const char* divbayes_last_error(void) { return g_error.c_str(); }
const char* divbayes_last_summary(void) { return g_summary.c_str(); }

divbayes_status divbayes_config_new(divbayes_config** out) {
  if (!out) return fail(DIVBAYES_ERR_ARGUMENT, "null output handle");
  return guarded([&] { *out = new divbayes_config{}; });
}

divbayes_status divbayes_config_load(const char* path, divbayes_config** out) {
  if (!path || !out) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new divbayes_config{load_config(path)}; });
}

divbayes_status divbayes_config_set(divbayes_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  return guarded([&] { set_config_value(config->value, key, value); });
}

divbayes_status divbayes_config_get(const divbayes_config* config, const char* key, char* buffer, size_t capacity,
                                    size_t* needed) {
  if (!config || !key) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  for (const auto& [k, v] : config->value.entries())
    if (k == key) return copy_out(v, buffer, capacity, needed);
  return fail(DIVBAYES_ERR_CONFIG, std::string("unknown key '") + key + "'");
}

divbayes_status divbayes_config_hash(const divbayes_config* config, char* buffer, size_t capacity) {
  if (!config) return fail(DIVBAYES_ERR_ARGUMENT, "null config");
  return copy_out(config_hash(config->value), buffer, capacity, nullptr);
}

divbayes_status divbayes_config_validate(const divbayes_config* config) {
  if (!config) return fail(DIVBAYES_ERR_ARGUMENT, "null config");
  return guarded([&] { config->value.validate(); });
}

void divbayes_config_free(divbayes_config* config) { delete config; }

int divbayes_run(const divbayes_config* config) {
  g_summary.clear();
  if (!config) return fail(DIVBAYES_ERR_ARGUMENT, "null config");
  ExperimentOutcome o;
  const divbayes_status s = guarded([&] { o = run_experiment(config->value); });
  if (s != DIVBAYES_OK) return s;
  g_summary = o.summary;
  if (o.exit_code != kExitOk) g_error = o.error_kind + ": " + o.message;
  return o.exit_code;
}

divbayes_status divbayes_bmem_load(const char* path, divbayes_bmem_model** out) {
  if (!path || !out) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::ifstream in(path);
    if (!in) throw DataError(std::string("cannot open '") + path + "'");
    *out = new divbayes_bmem_model{read_bmem_checkpoint(in)};
  });
}

size_t divbayes_bmem_num_experts(const divbayes_bmem_model* m) {
  return m ? static_cast<size_t>(m->value.models.front().num_experts()) : 0;
}
size_t divbayes_bmem_dim(const divbayes_bmem_model* m) {
  return m ? static_cast<size_t>(m->value.models.front().experts.dim()) : 0;
}
size_t divbayes_bmem_num_samples(const divbayes_bmem_model* m) { return m ? m->value.models.size() : 0; }

divbayes_status divbayes_bmem_predict(const divbayes_bmem_model* model, const double* x, size_t n, size_t dim,
                                      double* probabilities) {
  if (!model || (n > 0 && (!x || !probabilities))) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  if (dim != divbayes_bmem_dim(model)) return fail(DIVBAYES_ERR_ARGUMENT, "dimension does not match the model");
  return guarded([&] {
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        x, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    const auto p = bmem_predict_all(Matrix(X), model->value.models);
    std::copy(p.begin(), p.end(), probabilities);
  });
}

void divbayes_bmem_free(divbayes_bmem_model* model) { delete model; }

divbayes_status divbayes_ilfm_load(const char* path, divbayes_ilfm_state** out) {
  if (!path || !out) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    const std::string kind = checkpoint_kind(path);
    std::ifstream in(path);
    if (kind == "ilfm") *out = new divbayes_ilfm_state{read_ilfm_checkpoint(in).state};
    else *out = new divbayes_ilfm_state{read_ilfm_state(in)};
  });
}

size_t divbayes_ilfm_num_active(const divbayes_ilfm_state* s) {
  return s ? static_cast<size_t>(s->value.num_active()) : 0;
}
size_t divbayes_ilfm_dim(const divbayes_ilfm_state* s) { return s ? static_cast<size_t>(s->value.features.dim()) : 0; }
size_t divbayes_ilfm_num_examples(const divbayes_ilfm_state* s) {
  return s ? static_cast<size_t>(s->value.num_examples()) : 0;
}
double divbayes_ilfm_noise_variance(const divbayes_ilfm_state* s) { return s ? s->value.noise_variance : 0.0; }

divbayes_status divbayes_ilfm_features(const divbayes_ilfm_state* state, double* out, size_t capacity) {
  if (!state) return fail(DIVBAYES_ERR_ARGUMENT, "null state");
  const Matrix W = active_feature_matrix(state->value);
  if (capacity < static_cast<size_t>(W.size()) || (W.size() > 0 && !out))
    return fail(DIVBAYES_ERR_BUFFER, "buffer too small");
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) out[i * W.cols() + j] = W(i, j);
  return DIVBAYES_OK;
}

void divbayes_ilfm_free(divbayes_ilfm_state* state) { delete state; }

divbayes_status divbayes_vmf_sample(const double* mean, size_t dim, double kappa, uint64_t seed, size_t n,
                                    double* out) {
  if (!mean || (n > 0 && !out)) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    const VmfParams params(UnitVector::normalized(Eigen::Map<const Vector>(mean, static_cast<Eigen::Index>(dim))), kappa);
    Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
      const auto x = vmf_sample(params, rng);
      std::copy(x.coords().data(), x.coords().data() + dim, out + i * dim);
    }
  });
}

divbayes_status divbayes_mabn_sample(size_t K, size_t dim, double kappa, double magnitude_shape, double magnitude_rate,
                                     uint64_t seed, double* directions, double* magnitudes) {
  if (K > 0 && (!directions || !magnitudes)) return fail(DIVBAYES_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    require(dim >= 2, "dimension must be >= 2");
    const MabnHyper hyper(UnitVector::axis(static_cast<int>(dim), 0), kappa,
                          GammaParams(magnitude_shape, magnitude_rate));
    Rng rng(seed);
    const ComponentSet set = sample_mabn(static_cast<int>(K), hyper, rng);
    for (size_t k = 0; k < K; ++k) {
      const Vector& d = set.direction(k).coords();
      std::copy(d.data(), d.data() + dim, directions + k * dim);
      magnitudes[k] = set.magnitude(k);
    }
  });
}

}  // extern "C"
