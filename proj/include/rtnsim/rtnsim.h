/* C interface of the rtnsim library. Every function returns a status code;
 * on failure rtnsim_last_error() describes the problem for the calling
 * thread. Handles are opaque and owned by the caller. */
#ifndef RTNSIM_RTNSIM_H
#define RTNSIM_RTNSIM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RTNSIM_API __declspec(dllexport)
#else
#define RTNSIM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rtnsim_status {
  RTNSIM_OK = 0,
  RTNSIM_E_PARAMETER = 1,
  RTNSIM_E_DOMAIN = 2,
  RTNSIM_E_RANGE = 3,
  RTNSIM_E_VALIDATION = 4,
  RTNSIM_E_CONFIG = 5,
  RTNSIM_E_IO = 6,
  RTNSIM_E_RUNTIME = 7,
  RTNSIM_E_NULL = 8
} rtnsim_status;

RTNSIM_API const char* rtnsim_version(void);
RTNSIM_API const char* rtnsim_status_name(rtnsim_status status);
/* Message of the last failure on this thread; empty after a success. */
RTNSIM_API const char* rtnsim_last_error(void);

/* ---- configuration ---------------------------------------------------- */

typedef struct rtnsim_config rtnsim_config;

/* New configuration holding the shipped defaults. */
RTNSIM_API rtnsim_status rtnsim_config_create(rtnsim_config** out);
RTNSIM_API void rtnsim_config_destroy(rtnsim_config* config);
RTNSIM_API rtnsim_status rtnsim_config_load_file(rtnsim_config* config, const char* path);
RTNSIM_API rtnsim_status rtnsim_config_load_string(rtnsim_config* config, const char* toml);
/* Applies RTNSIM_SECTION__KEY=value entries of a NULL-terminated block. */
RTNSIM_API rtnsim_status rtnsim_config_apply_env(rtnsim_config* config,
                                                 const char* const* environ_block);
/* key is "section.name"; value uses TOML value syntax. */
RTNSIM_API rtnsim_status rtnsim_config_set(rtnsim_config* config, const char* key,
                                           const char* value);
RTNSIM_API rtnsim_status rtnsim_config_hash(const rtnsim_config* config, uint64_t* out);
/* Copies the effective config text into buf (NUL-terminated, truncated to
 * capacity); *needed receives the full length including the NUL. */
RTNSIM_API rtnsim_status rtnsim_config_dump(const rtnsim_config* config, char* buf,
                                            size_t capacity, size_t* needed);

typedef void (*rtnsim_log_fn)(const char* line, void* user);

/* Runs psd | ramsey | sweep | multi-rtn | fit, writing into out_dir
 * (NULL = the config's output.dir). Diagnostics go to log when non-NULL. */
RTNSIM_API rtnsim_status rtnsim_run(const rtnsim_config* config, const char* command,
                                    const char* out_dir, rtnsim_log_fn log, void* user);

/* ---- qubit and analytic values ----------------------------------------- */

RTNSIM_API rtnsim_status rtnsim_transmon_frequency(double ec_ghz, double ej_ghz, double phi_b,
                                                   double* omega01_rad_per_s);
RTNSIM_API rtnsim_status rtnsim_frequency_derivative(double ec_ghz, double ej_ghz, double phi_b,
                                                     double* rad_per_s_per_phi0);
RTNSIM_API rtnsim_status rtnsim_invert_frequency(double ec_ghz, double ej_ghz, double f01_hz,
                                                 double* phi_b);
RTNSIM_API rtnsim_status rtnsim_t2_from_t1_tphi(double t1, double t2phi, double* t2);
RTNSIM_API rtnsim_status rtnsim_exact_decay(double coupling_v, double lambda, double t,
                                            double* re, double* im);
RTNSIM_API rtnsim_status rtnsim_truncated_decay(double coupling_v, double lambda, int n_max,
                                                double t, double* re, double* im,
                                                double* tail_bound);

/* ---- Monte Carlo traces ------------------------------------------------ */

typedef struct rtnsim_trace rtnsim_trace;

typedef enum rtnsim_trace_field {
  RTNSIM_TRACE_TIME = 0,
  RTNSIM_TRACE_P1 = 1,
  RTNSIM_TRACE_ENVELOPE = 2,
  RTNSIM_TRACE_DECAY_RE = 3,
  RTNSIM_TRACE_DECAY_IM = 4,
  RTNSIM_TRACE_STDERR = 5
} rtnsim_trace_field;

/* Ensemble Ramsey simulation described by the configuration. */
RTNSIM_API rtnsim_status rtnsim_ramsey_simulate(const rtnsim_config* config,
                                                rtnsim_trace** out);
RTNSIM_API void rtnsim_trace_destroy(rtnsim_trace* trace);
RTNSIM_API size_t rtnsim_trace_length(const rtnsim_trace* trace);
/* Copies min(length, capacity) values of one field into dst. */
RTNSIM_API rtnsim_status rtnsim_trace_copy(const rtnsim_trace* trace, rtnsim_trace_field field,
                                           double* dst, size_t capacity);

/* ---- fitting ----------------------------------------------------------- */

typedef enum rtnsim_fit_model {
  RTNSIM_FIT_EXPONENTIAL = 0,
  RTNSIM_FIT_BEATING = 1
} rtnsim_fit_model;

typedef struct rtnsim_fit_result {
  int model;
  double gamma;             /* 1/s */
  double delta_omega;       /* rad/s */
  double delta_omega_split; /* rad/s, beating only */
  double residual_rms;
  int converged;
  int non_identifiable;
  int iterations;
  int model_preferred; /* beating only */
  double f_pvalue;     /* beating only */
} rtnsim_fit_result;

RTNSIM_API rtnsim_status rtnsim_fit_ramsey(const double* times, const double* p1, size_t n,
                                           rtnsim_fit_model model, double f_test_alpha,
                                           rtnsim_fit_result* out);

#ifdef __cplusplus
}
#endif

#endif
