#ifndef DIVBAYES_H
#define DIVBAYES_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DIVBAYES_API __declspec(dllexport)
#else
#define DIVBAYES_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. The first five equal the CLI exit codes. */
typedef enum divbayes_status {
  DIVBAYES_OK = 0,
  DIVBAYES_ERR_FAILURE = 1,
  DIVBAYES_ERR_CONFIG = 2,
  DIVBAYES_ERR_DATA = 3,
  DIVBAYES_ERR_NUMERICAL = 4,
  DIVBAYES_ERR_ARGUMENT = 5, /* null handle, short buffer or bad argument */
  DIVBAYES_ERR_BUFFER = 6    /* output buffer too small; *needed holds the size */
} divbayes_status;

typedef struct divbayes_config divbayes_config;
typedef struct divbayes_bmem_model divbayes_bmem_model;
typedef struct divbayes_ilfm_state divbayes_ilfm_state;

DIVBAYES_API const char* divbayes_version(void);
/* Message of the last failed call on this thread, "" if none. */
DIVBAYES_API const char* divbayes_last_error(void);

/* ---- configuration ---- */
DIVBAYES_API divbayes_status divbayes_config_new(divbayes_config** out);
DIVBAYES_API divbayes_status divbayes_config_load(const char* path, divbayes_config** out);
DIVBAYES_API divbayes_status divbayes_config_set(divbayes_config* config, const char* key, const char* value);
/* Copies the canonical value with its terminating NUL. With a short buffer
   returns DIVBAYES_ERR_BUFFER and stores the required size in *needed. */
DIVBAYES_API divbayes_status divbayes_config_get(const divbayes_config* config, const char* key, char* buffer,
                                                 size_t capacity, size_t* needed);
DIVBAYES_API divbayes_status divbayes_config_hash(const divbayes_config* config, char* buffer, size_t capacity);
DIVBAYES_API divbayes_status divbayes_config_validate(const divbayes_config* config);
DIVBAYES_API void divbayes_config_free(divbayes_config* config);

/* Runs the configured task. Returns the exit code (a divbayes_status value).
   The run summary is available from divbayes_last_summary afterwards. */
DIVBAYES_API int divbayes_run(const divbayes_config* config);
DIVBAYES_API const char* divbayes_last_summary(void);

/* ---- mixture of experts checkpoints ---- */
DIVBAYES_API divbayes_status divbayes_bmem_load(const char* path, divbayes_bmem_model** out);
DIVBAYES_API size_t divbayes_bmem_num_experts(const divbayes_bmem_model* model);
DIVBAYES_API size_t divbayes_bmem_dim(const divbayes_bmem_model* model);
DIVBAYES_API size_t divbayes_bmem_num_samples(const divbayes_bmem_model* model);
/* x is row-major n x dim; writes n probabilities of label 1 averaged over the
   stored samples. */
DIVBAYES_API divbayes_status divbayes_bmem_predict(const divbayes_bmem_model* model, const double* x, size_t n,
                                                   size_t dim, double* probabilities);
DIVBAYES_API void divbayes_bmem_free(divbayes_bmem_model* model);

/* ---- latent feature states (checkpoint or bare state file) ---- */
DIVBAYES_API divbayes_status divbayes_ilfm_load(const char* path, divbayes_ilfm_state** out);
DIVBAYES_API size_t divbayes_ilfm_num_active(const divbayes_ilfm_state* state);
DIVBAYES_API size_t divbayes_ilfm_dim(const divbayes_ilfm_state* state);
DIVBAYES_API size_t divbayes_ilfm_num_examples(const divbayes_ilfm_state* state);
DIVBAYES_API double divbayes_ilfm_noise_variance(const divbayes_ilfm_state* state);
/* Active features as a row-major num_active x dim matrix. */
DIVBAYES_API divbayes_status divbayes_ilfm_features(const divbayes_ilfm_state* state, double* out, size_t capacity);
DIVBAYES_API void divbayes_ilfm_free(divbayes_ilfm_state* state);

/* ---- samplers ---- */
/* n draws from vMF(mean / |mean|, kappa) in dimension dim >= 2, row-major. */
DIVBAYES_API divbayes_status divbayes_vmf_sample(const double* mean, size_t dim, double kappa, uint64_t seed, size_t n,
                                                 double* out);
/* K components of the mutual angular prior with base direction e_1.
   directions is row-major K x dim, magnitudes has K entries. */
DIVBAYES_API divbayes_status divbayes_mabn_sample(size_t K, size_t dim, double kappa, double magnitude_shape,
                                                  double magnitude_rate, uint64_t seed, double* directions,
                                                  double* magnitudes);

#ifdef __cplusplus
}
#endif

#endif /* DIVBAYES_H */
