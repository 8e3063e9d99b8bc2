/* C interface to the robust state-estimation library.
 *
 * All functions returning gmukf_status put a human-readable message behind
 * gmukf_last_error() on failure (thread-local; overwritten by the next failing
 * call on the same thread). Matrices cross this boundary as row-major arrays.
 */
#ifndef GMUKF_H
#define GMUKF_H

#if defined(_WIN32)
#  define GMUKF_API __declspec(dllexport)
#else
#  define GMUKF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gmukf_status {
  GMUKF_OK = 0,
  GMUKF_ERR_INVALID_ARGUMENT = 1,
  GMUKF_ERR_DIMENSION = 2,
  GMUKF_ERR_SINGULAR_COVARIANCE = 3,
  GMUKF_ERR_SINGULAR_INNOVATION = 4,
  GMUKF_ERR_RANK_DEFICIENT = 5,
  GMUKF_ERR_DEGENERATE_CLOUD = 6,
  GMUKF_ERR_ZERO_SCALE = 7,
  GMUKF_ERR_CONFIG = 8,
  GMUKF_ERR_IO = 9,
  GMUKF_ERR_RUNTIME = 10
} gmukf_status;

/* Library version as "major.minor.patch". */
GMUKF_API const char* gmukf_version(void);

/* Message of the calling thread's most recent failure; "" if none yet. */
GMUKF_API const char* gmukf_last_error(void);

/* ---- models ---- */

typedef struct gmukf_model gmukf_model;

typedef struct gmukf_swing_params {
  double inertia;       /* H [s] */
  double damping;       /* D */
  double mech_power;    /* Pm */
  double internal_emf;  /* E' */
  double bus_voltage;   /* V */
  double reactance;     /* X */
  double sync_speed;    /* omega_s [rad/s] */
  double dt;            /* integration step [s] */
} gmukf_swing_params;

GMUKF_API void gmukf_swing_params_default(gmukf_swing_params* out);

/* Generator swing model with state (delta, omega) and measurement (Pe, omega).
 * q and r are 2x2 row-major noise covariances for the base model. With
 * obs_replicas > 1 the measurement vector stacks that many independent
 * replicas of the base channels and R becomes block-diagonal. params may be
 * NULL for the defaults. */
GMUKF_API gmukf_status gmukf_model_create_swing(const gmukf_swing_params* params,
                                                const double* q, const double* r,
                                                int obs_replicas,
                                                gmukf_model** out);

/* Linear model x' = A x, z = C x. a is n*n, c is m*n, q is n*n, r is m*m,
 * all row-major. */
GMUKF_API gmukf_status gmukf_model_create_linear(int n, int m, const double* a,
                                                 const double* c, const double* q,
                                                 const double* r, gmukf_model** out);

GMUKF_API void gmukf_model_destroy(gmukf_model* model);

GMUKF_API int gmukf_model_state_dim(const gmukf_model* model);
GMUKF_API int gmukf_model_measurement_dim(const gmukf_model* model);

/* Evaluate the deterministic transition / measurement map. x has state_dim
 * entries; out needs state_dim (f) or measurement_dim (h) entries. */
GMUKF_API gmukf_status gmukf_model_f(const gmukf_model* model, const double* x,
                                     double* out);
GMUKF_API gmukf_status gmukf_model_h(const gmukf_model* model, const double* x,
                                     double* out);

/* ---- filters ---- */

typedef struct gmukf_filter gmukf_filter;

typedef enum gmukf_filter_kind {
  GMUKF_FILTER_UKF = 0,
  GMUKF_FILTER_GM = 1
} gmukf_filter_kind;

typedef struct gmukf_gm_options {
  double lambda;         /* Huber threshold */
  double d;              /* projection-statistics weight parameter */
  int eta_df;            /* flag threshold chi-square dof (2 or 4) */
  double eta_quantile;
  double irls_tol;
  int irls_max_iter;
  double b_m;            /* scale consistency correction */
  int force_unit_weights;
} gmukf_gm_options;

GMUKF_API void gmukf_gm_options_default(gmukf_gm_options* out);

/* Creates a filter over the model with prior (mean, cov); cov is n*n
 * row-major. options applies to GMUKF_FILTER_GM and may be NULL for
 * defaults; it is ignored for the plain UKF. The model handle may be
 * destroyed before the filter; the filter keeps the model alive. */
GMUKF_API gmukf_status gmukf_filter_create(const gmukf_model* model,
                                           gmukf_filter_kind kind,
                                           const double* mean, const double* cov,
                                           const gmukf_gm_options* options,
                                           gmukf_filter** out);

GMUKF_API void gmukf_filter_destroy(gmukf_filter* filter);

/* Processes one measurement (len == measurement_dim). On failure the filter
 * state is unchanged and the step may be retried with other data. */
GMUKF_API gmukf_status gmukf_filter_step(gmukf_filter* filter, const double* z,
                                         int len);

GMUKF_API gmukf_status gmukf_filter_state(const gmukf_filter* filter, double* out,
                                          int len);
/* Posterior covariance, n*n row-major. */
GMUKF_API gmukf_status gmukf_filter_covariance(const gmukf_filter* filter,
                                               double* out, int len);

/* Outlier weights of the most recent GM step, measurement rows first, then
 * prediction rows (len == measurement_dim + state_dim). Fails on a UKF
 * filter or before the first step. */
GMUKF_API gmukf_status gmukf_filter_weights(const gmukf_filter* filter,
                                            double* out, int len);
/* IRLS iteration count of the most recent GM step. */
GMUKF_API gmukf_status gmukf_filter_iterations(const gmukf_filter* filter,
                                               int* out);

/* ---- experiments ---- */

typedef struct gmukf_experiment gmukf_experiment;

/* Loads and validates a JSON experiment config from a file / from text.
 * Validation problems name the offending field path. */
GMUKF_API gmukf_status gmukf_experiment_load(const char* path,
                                             gmukf_experiment** out);
GMUKF_API gmukf_status gmukf_experiment_parse(const char* json_text,
                                              gmukf_experiment** out);

GMUKF_API void gmukf_experiment_destroy(gmukf_experiment* experiment);

/* Overrides applied on top of the loaded config. */
GMUKF_API gmukf_status gmukf_experiment_set_seed(gmukf_experiment* experiment,
                                                 unsigned long long seed);
GMUKF_API gmukf_status gmukf_experiment_set_replicates(gmukf_experiment* experiment,
                                                       int replicates);
GMUKF_API gmukf_status gmukf_experiment_set_output_dir(gmukf_experiment* experiment,
                                                       const char* dir);

/* Effective config (defaults filled in) as JSON; owned by the experiment and
 * valid until the next call on it or its destruction. */
GMUKF_API const char* gmukf_experiment_config_json(gmukf_experiment* experiment);

/* Runs every replicate. write_files != 0 also writes the CSV traces and
 * summary.json into the output directory. */
GMUKF_API gmukf_status gmukf_experiment_run(gmukf_experiment* experiment,
                                            int write_files);

/* Result accessors; all require a completed gmukf_experiment_run. */
GMUKF_API int gmukf_experiment_state_dim(const gmukf_experiment* experiment);
GMUKF_API int gmukf_experiment_measurement_dim(const gmukf_experiment* experiment);
GMUKF_API int gmukf_experiment_failed_replicates(const gmukf_experiment* experiment);

/* Pooled per-state RMSE of one filter (len == state_dim). Fails if the
 * filter was disabled or no replicate of it completed. */
GMUKF_API gmukf_status gmukf_experiment_rmse(const gmukf_experiment* experiment,
                                             gmukf_filter_kind kind, double* out,
                                             int len);

/* 1 when the config requested checks, else 0. */
GMUKF_API int gmukf_experiment_checks_evaluated(const gmukf_experiment* experiment);
/* 1 when no requested check failed (vacuously 1 with no checks). */
GMUKF_API int gmukf_experiment_checks_passed(const gmukf_experiment* experiment);

/* Run summary as JSON; owned by the experiment, valid until the next call on
 * it or its destruction. */
GMUKF_API const char* gmukf_experiment_summary_json(gmukf_experiment* experiment);

#ifdef __cplusplus
}
#endif

#endif /* GMUKF_H */
