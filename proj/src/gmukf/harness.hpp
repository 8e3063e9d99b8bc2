#pragma once

#include "gmukf/models.hpp"
#include "gmukf/noise.hpp"
#include "gmukf/robust.hpp"
#include "gmukf/types.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace gmukf {

// Optional pass/fail gates evaluated after a run (the CLI --check mode).
// Negative thresholds mean "not checked".
struct ExperimentChecks {
  double max_rmse_gmukf = -1.0;       // worst per-state GM-UKF RMSE allowed
  double max_rmse_ratio = -1.0;       // worst per-state GM-UKF/UKF RMSE ratio
  double min_flag_rate = -1.0;        // scheduled outlier rows with weight < 1
  double min_converged_fraction = -1.0;

  bool any() const {
    return max_rmse_gmukf >= 0.0 || max_rmse_ratio >= 0.0 ||
           min_flag_rate >= 0.0 || min_converged_fraction >= 0.0;
  }
};

enum class TraceOutput { all, first, none };

// Full description of a simulation experiment. Parsed from JSON; see the
// README for the schema.
struct ExperimentConfig {
  // model
  std::string model_type = "swing";  // "swing" | "linear"
  SwingParams swing;
  int obs_replicas = 1;  // swing only: independent meters per channel
  Mat linear_A;
  Mat linear_C;

  // simulation
  int horizon = 100;
  int replicates = 1;
  std::uint64_t seed = 1;
  GaussianBelief initial;            // filter prior
  Vec truth_start;                   // defaults to the prior mean
  std::vector<NoiseSpec> process_noise;      // one per state
  std::vector<NoiseSpec> measurement_noise;  // one per base channel
  OutlierSchedule outliers;

  // filters
  bool run_ukf = true;
  bool run_gmukf = true;
  GMConfig gm;

  // output
  std::string output_dir = "out";
  TraceOutput traces = TraceOutput::all;
  ExperimentChecks checks;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
void validate(const ExperimentConfig& cfg);

// Effective config as canonical JSON (defaults filled in); echoed into the
// run summary.
std::string config_json(const ExperimentConfig& cfg);

// The model the config describes, with Q and R taken from the nominal noise
// covariances. With obs_replicas > 1 the per-channel measurement specs are
// repeated once per replica block; outlier channels already address the
// replicated measurement space.
struct ExperimentSetup {
  std::shared_ptr<const DynamicModel> model;
  std::vector<NoiseSpec> process_specs;
  std::vector<NoiseSpec> measurement_specs;  // after replication
  OutlierSchedule outliers;
  Vec truth_start;
};

ExperimentSetup build_setup(const ExperimentConfig& cfg);

// Everything recorded about one replicate when traces are retained. Columns
// a filter did not produce (disabled, or failed from some step on) hold NaN.
struct ReplicateTrace {
  int replicate = 0;
  Mat x_true;   // horizon x n
  Mat z;        // horizon x m
  Mat ukf_x;    // horizon x n
  Mat gmukf_x;  // horizon x n
  Mat gmukf_cov_diag;  // horizon x n
  Mat ps;       // horizon x (m + n)
  Mat weights;  // horizon x (m + n)
  Vec iterations;  // horizon; integer-valued where the solve ran
};

struct ReplicateSummary {
  int index = 0;
  bool ukf_completed = true;
  bool gmukf_completed = true;
  Vec ukf_rmse;    // per state
  Vec gmukf_rmse;  // per state
};

struct RunResult {
  ExperimentConfig config;
  int state_dim = 0;
  int measurement_dim = 0;

  std::vector<ReplicateSummary> replicates;
  std::vector<ReplicateTrace> traces;  // per TraceOutput policy

  Vec ukf_rmse;    // pooled per state over completed replicates
  Vec gmukf_rmse;

  // GM-UKF solver statistics over all completed steps.
  long gm_steps = 0;
  long gm_steps_converged = 0;
  double mean_irls_iterations = 0.0;
  long objective_violations = 0;  // IRLS objective increases (beyond slack)

  // Outlier detection bookkeeping against the expanded schedule.
  long scheduled_rows = 0;
  long flagged_true = 0;    // scheduled row-steps that got weight < 1
  long flagged_echo = 0;    // rows flagged one step after a scheduled hit
  long flagged_false = 0;   // remaining weight < 1 row-steps
  int failed_replicates = 0;

  bool checks_evaluated = false;
  bool checks_passed = true;
  std::vector<std::string> check_failures;
};

RunResult run_experiment(const ExperimentConfig& cfg);

// Test seam: run with an externally supplied setup (custom models).
RunResult run_experiment(const ExperimentConfig& cfg, const ExperimentSetup& setup);

// Writes replicate CSV traces and summary.json under dir. Numbers are printed
// with 17 significant digits so parsing them back reproduces the doubles.
void write_outputs(const RunResult& result, const std::string& dir);

std::string summary_json(const RunResult& result);

}  // namespace gmukf
