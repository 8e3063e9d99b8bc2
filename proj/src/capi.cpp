#include "gmukf.h"

#include "gmukf/harness.hpp"
#include "gmukf/models.hpp"
#include "gmukf/robust.hpp"
#include "gmukf/unscented.hpp"

#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <utility>

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

gmukf_status map_code(gmukf::ErrorCode code) {
  using gmukf::ErrorCode;
  switch (code) {
    case ErrorCode::invalid_argument: return GMUKF_ERR_INVALID_ARGUMENT;
    case ErrorCode::dimension_mismatch: return GMUKF_ERR_DIMENSION;
    case ErrorCode::singular_covariance: return GMUKF_ERR_SINGULAR_COVARIANCE;
    case ErrorCode::singular_innovation: return GMUKF_ERR_SINGULAR_INNOVATION;
    case ErrorCode::rank_deficient: return GMUKF_ERR_RANK_DEFICIENT;
    case ErrorCode::degenerate_cloud: return GMUKF_ERR_DEGENERATE_CLOUD;
    case ErrorCode::zero_scale: return GMUKF_ERR_ZERO_SCALE;
    case ErrorCode::config_error: return GMUKF_ERR_CONFIG;
    case ErrorCode::io_error: return GMUKF_ERR_IO;
  }
  return GMUKF_ERR_RUNTIME;
}

template <typename Fn>
gmukf_status guarded(Fn&& fn) {
  try {
    fn();
    return GMUKF_OK;
  } catch (const gmukf::Error& e) {
    set_error(e.what());
    return map_code(e.code());
  } catch (const std::exception& e) {
    set_error(e.what());
    return GMUKF_ERR_RUNTIME;
  } catch (...) {
    set_error("unknown error");
    return GMUKF_ERR_RUNTIME;
  }
}

gmukf_status arg_error(const char* msg) {
  set_error(msg);
  return GMUKF_ERR_INVALID_ARGUMENT;
}

gmukf_status dim_error(const char* msg) {
  set_error(msg);
  return GMUKF_ERR_DIMENSION;
}

gmukf::Mat from_row_major(const double* data, int rows, int cols) {
  gmukf::Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = data[i * cols + j];
  return m;
}

void to_row_major(const gmukf::Mat& m, double* out) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out[i * m.cols() + j] = m(i, j);
}

gmukf::GMConfig to_gm_config(const gmukf_gm_options& o) {
  gmukf::GMConfig cfg;
  cfg.lambda = o.lambda;
  cfg.d = o.d;
  cfg.eta_df = o.eta_df;
  cfg.eta_quantile = o.eta_quantile;
  cfg.irls_tol = o.irls_tol;
  cfg.irls_max_iter = o.irls_max_iter;
  cfg.b_m = o.b_m;
  cfg.force_unit_weights = o.force_unit_weights != 0;
  return cfg;
}

}  // namespace

struct gmukf_model {
  std::shared_ptr<const gmukf::DynamicModel> model;
};

struct gmukf_filter {
  std::shared_ptr<const gmukf::DynamicModel> model;
  gmukf_filter_kind kind = GMUKF_FILTER_UKF;
  gmukf::GMConfig gm;
  gmukf::GaussianBelief belief;
  gmukf::GmHistory history;
  gmukf::Vec last_weights;
  int last_iterations = -1;
};

struct gmukf_experiment {
  gmukf::ExperimentConfig config;
  std::optional<gmukf::RunResult> result;
  std::string text;  // backing store for returned const char* strings
};

extern "C" {

const char* gmukf_version(void) { return "1.0.0"; }

const char* gmukf_last_error(void) { return g_last_error.c_str(); }

void gmukf_swing_params_default(gmukf_swing_params* out) {
  if (!out) return;
  const gmukf::SwingParams p;
  out->inertia = p.inertia;
  out->damping = p.damping;
  out->mech_power = p.mech_power;
  out->internal_emf = p.internal_emf;
  out->bus_voltage = p.bus_voltage;
  out->reactance = p.reactance;
  out->sync_speed = p.sync_speed;
  out->dt = p.dt;
}

gmukf_status gmukf_model_create_swing(const gmukf_swing_params* params,
                                      const double* q, const double* r,
                                      int obs_replicas, gmukf_model** out) {
  if (!q || !r || !out) return arg_error("q, r and out must not be NULL");
  return guarded([&] {
    gmukf::SwingParams p;
    if (params) {
      p.inertia = params->inertia;
      p.damping = params->damping;
      p.mech_power = params->mech_power;
      p.internal_emf = params->internal_emf;
      p.bus_voltage = params->bus_voltage;
      p.reactance = params->reactance;
      p.sync_speed = params->sync_speed;
      p.dt = params->dt;
    }
    auto base = std::make_shared<gmukf::SwingModel>(p, from_row_major(q, 2, 2),
                                                    from_row_major(r, 2, 2));
    std::shared_ptr<const gmukf::DynamicModel> model = base;
    if (obs_replicas != 1)
      model = std::make_shared<gmukf::ReplicatedMeasurementModel>(base, obs_replicas);
    *out = new gmukf_model{std::move(model)};
  });
}

gmukf_status gmukf_model_create_linear(int n, int m, const double* a,
                                       const double* c, const double* q,
                                       const double* r, gmukf_model** out) {
  if (!a || !c || !q || !r || !out)
    return arg_error("a, c, q, r and out must not be NULL");
  if (n < 1 || m < 1) return arg_error("n and m must be positive");
  return guarded([&] {
    auto model = std::make_shared<gmukf::LinearModel>(
        from_row_major(a, n, n), from_row_major(c, m, n),
        from_row_major(q, n, n), from_row_major(r, m, m));
    *out = new gmukf_model{std::move(model)};
  });
}

void gmukf_model_destroy(gmukf_model* model) { delete model; }

int gmukf_model_state_dim(const gmukf_model* model) {
  return model ? model->model->state_dim() : 0;
}

int gmukf_model_measurement_dim(const gmukf_model* model) {
  return model ? model->model->measurement_dim() : 0;
}

gmukf_status gmukf_model_f(const gmukf_model* model, const double* x, double* out) {
  if (!model || !x || !out) return arg_error("model, x and out must not be NULL");
  return guarded([&] {
    const int n = model->model->state_dim();
    const gmukf::Vec v = model->model->f(Eigen::Map<const gmukf::Vec>(x, n));
    Eigen::Map<gmukf::Vec>(out, v.size()) = v;
  });
}

gmukf_status gmukf_model_h(const gmukf_model* model, const double* x, double* out) {
  if (!model || !x || !out) return arg_error("model, x and out must not be NULL");
  return guarded([&] {
    const int n = model->model->state_dim();
    const gmukf::Vec v = model->model->h(Eigen::Map<const gmukf::Vec>(x, n));
    Eigen::Map<gmukf::Vec>(out, v.size()) = v;
  });
}

void gmukf_gm_options_default(gmukf_gm_options* out) {
  if (!out) return;
  const gmukf::GMConfig cfg;
  out->lambda = cfg.lambda;
  out->d = cfg.d;
  out->eta_df = cfg.eta_df;
  out->eta_quantile = cfg.eta_quantile;
  out->irls_tol = cfg.irls_tol;
  out->irls_max_iter = cfg.irls_max_iter;
  out->b_m = cfg.b_m;
  out->force_unit_weights = cfg.force_unit_weights ? 1 : 0;
}

gmukf_status gmukf_filter_create(const gmukf_model* model, gmukf_filter_kind kind,
                                 const double* mean, const double* cov,
                                 const gmukf_gm_options* options,
                                 gmukf_filter** out) {
  if (!model || !mean || !cov || !out)
    return arg_error("model, mean, cov and out must not be NULL");
  if (kind != GMUKF_FILTER_UKF && kind != GMUKF_FILTER_GM)
    return arg_error("unknown filter kind");
  return guarded([&] {
    const int n = model->model->state_dim();
    auto filter = std::make_unique<gmukf_filter>();
    filter->model = model->model;
    filter->kind = kind;
    if (options) filter->gm = to_gm_config(*options);
    gmukf::validate(filter->gm);
    filter->belief.mean = Eigen::Map<const gmukf::Vec>(mean, n);
    filter->belief.cov = from_row_major(cov, n, n);
    // Reject an unusable prior covariance immediately rather than at the
    // first step.
    gmukf::generate_sigma_points(filter->belief);
    *out = filter.release();
  });
}

void gmukf_filter_destroy(gmukf_filter* filter) { delete filter; }

gmukf_status gmukf_filter_step(gmukf_filter* filter, const double* z, int len) {
  if (!filter || !z) return arg_error("filter and z must not be NULL");
  if (len != filter->model->measurement_dim())
    return dim_error("z length does not match the model");
  return guarded([&] {
    const gmukf::Vec measurement = Eigen::Map<const gmukf::Vec>(z, len);
    if (filter->kind == GMUKF_FILTER_UKF) {
      const gmukf::GaussianBelief predicted =
          gmukf::ukf_predict(filter->belief, *filter->model);
      filter->belief = gmukf::ukf_update(predicted, *filter->model, measurement);
    } else {
      gmukf::GmHistory history = filter->history;  // keep intact on failure
      gmukf::GmStepResult step = gmukf::gm_ukf_step(
          filter->belief, *filter->model, measurement, history, filter->gm);
      filter->history = std::move(history);
      filter->belief =
          gmukf::GaussianBelief{step.estimate.state, step.estimate.cov};
      filter->last_weights = step.diagnostics.weights;
      filter->last_iterations = step.estimate.iterations;
    }
  });
}

gmukf_status gmukf_filter_state(const gmukf_filter* filter, double* out, int len) {
  if (!filter || !out) return arg_error("filter and out must not be NULL");
  if (len != filter->model->state_dim())
    return dim_error("out length does not match the state dimension");
  Eigen::Map<gmukf::Vec>(out, len) = filter->belief.mean;
  return GMUKF_OK;
}

gmukf_status gmukf_filter_covariance(const gmukf_filter* filter, double* out,
                                     int len) {
  if (!filter || !out) return arg_error("filter and out must not be NULL");
  const int n = filter->model->state_dim();
  if (len != n * n) return dim_error("out needs state_dim^2 entries");
  to_row_major(filter->belief.cov, out);
  return GMUKF_OK;
}

gmukf_status gmukf_filter_weights(const gmukf_filter* filter, double* out,
                                  int len) {
  if (!filter || !out) return arg_error("filter and out must not be NULL");
  if (filter->kind != GMUKF_FILTER_GM)
    return arg_error("weights are only available on a GM filter");
  if (filter->last_weights.size() == 0)
    return arg_error("no step has run yet");
  if (len != static_cast<int>(filter->last_weights.size()))
    return dim_error("out needs measurement_dim + state_dim entries");
  Eigen::Map<gmukf::Vec>(out, len) = filter->last_weights;
  return GMUKF_OK;
}

gmukf_status gmukf_filter_iterations(const gmukf_filter* filter, int* out) {
  if (!filter || !out) return arg_error("filter and out must not be NULL");
  if (filter->kind != GMUKF_FILTER_GM)
    return arg_error("iterations are only available on a GM filter");
  if (filter->last_iterations < 0) return arg_error("no step has run yet");
  *out = filter->last_iterations;
  return GMUKF_OK;
}

gmukf_status gmukf_experiment_load(const char* path, gmukf_experiment** out) {
  if (!path || !out) return arg_error("path and out must not be NULL");
  return guarded([&] {
    auto e = std::make_unique<gmukf_experiment>();
    e->config = gmukf::load_config(path);
    *out = e.release();
  });
}

gmukf_status gmukf_experiment_parse(const char* json_text, gmukf_experiment** out) {
  if (!json_text || !out) return arg_error("json_text and out must not be NULL");
  return guarded([&] {
    auto e = std::make_unique<gmukf_experiment>();
    e->config = gmukf::parse_config(json_text);
    *out = e.release();
  });
}

void gmukf_experiment_destroy(gmukf_experiment* experiment) { delete experiment; }

gmukf_status gmukf_experiment_set_seed(gmukf_experiment* experiment,
                                       unsigned long long seed) {
  if (!experiment) return arg_error("experiment must not be NULL");
  experiment->config.seed = seed;
  return GMUKF_OK;
}

gmukf_status gmukf_experiment_set_replicates(gmukf_experiment* experiment,
                                             int replicates) {
  if (!experiment) return arg_error("experiment must not be NULL");
  if (replicates < 1) return arg_error("replicates must be at least 1");
  experiment->config.replicates = replicates;
  return GMUKF_OK;
}

gmukf_status gmukf_experiment_set_output_dir(gmukf_experiment* experiment,
                                             const char* dir) {
  if (!experiment || !dir) return arg_error("experiment and dir must not be NULL");
  if (!*dir) return arg_error("dir must not be empty");
  experiment->config.output_dir = dir;
  return GMUKF_OK;
}

const char* gmukf_experiment_config_json(gmukf_experiment* experiment) {
  if (!experiment) return "";
  try {
    experiment->text = gmukf::config_json(experiment->config);
  } catch (const std::exception& e) {
    set_error(e.what());
    return "";
  }
  return experiment->text.c_str();
}

gmukf_status gmukf_experiment_run(gmukf_experiment* experiment, int write_files) {
  if (!experiment) return arg_error("experiment must not be NULL");
  return guarded([&] {
    gmukf::RunResult result = gmukf::run_experiment(experiment->config);
    if (write_files) gmukf::write_outputs(result, experiment->config.output_dir);
    experiment->result = std::move(result);
  });
}

int gmukf_experiment_state_dim(const gmukf_experiment* experiment) {
  return experiment && experiment->result ? experiment->result->state_dim : 0;
}

int gmukf_experiment_measurement_dim(const gmukf_experiment* experiment) {
  return experiment && experiment->result ? experiment->result->measurement_dim : 0;
}

int gmukf_experiment_failed_replicates(const gmukf_experiment* experiment) {
  return experiment && experiment->result ? experiment->result->failed_replicates : -1;
}

gmukf_status gmukf_experiment_rmse(const gmukf_experiment* experiment,
                                   gmukf_filter_kind kind, double* out, int len) {
  if (!experiment || !out) return arg_error("experiment and out must not be NULL");
  if (!experiment->result) return arg_error("the experiment has not run");
  const gmukf::Vec& rmse = kind == GMUKF_FILTER_UKF ? experiment->result->ukf_rmse
                                                    : experiment->result->gmukf_rmse;
  if (rmse.size() == 0)
    return arg_error("no completed replicates for the requested filter");
  if (len != static_cast<int>(rmse.size()))
    return dim_error("out length does not match the state dimension");
  Eigen::Map<gmukf::Vec>(out, len) = rmse;
  return GMUKF_OK;
}

int gmukf_experiment_checks_evaluated(const gmukf_experiment* experiment) {
  return experiment && experiment->result && experiment->result->checks_evaluated
             ? 1
             : 0;
}

int gmukf_experiment_checks_passed(const gmukf_experiment* experiment) {
  return experiment && experiment->result && experiment->result->checks_passed
             ? 1
             : 0;
}

const char* gmukf_experiment_summary_json(gmukf_experiment* experiment) {
  if (!experiment || !experiment->result) return "";
  try {
    experiment->text = gmukf::summary_json(*experiment->result);
  } catch (const std::exception& e) {
    set_error(e.what());
    return "";
  }
  return experiment->text.c_str();
}

}  // extern "C"
