#pragma once

#include "gmukf/models.hpp"
#include "gmukf/regression.hpp"
#include "gmukf/types.hpp"

#include <vector>

namespace gmukf {

// Tuning of the generalized maximum-likelihood estimator.
struct GMConfig {
  double lambda = 1.5;      // Huber threshold; 1.5 to 3 is the sensible range
  double d = 1.5;           // projection-statistics weight parameter
  int eta_df = 2;           // chi-square dof of the flag threshold (2 or 4)
  double eta_quantile = 0.975;
  double irls_tol = 1e-2;   // stop when the infinity norm of the step is below
  int irls_max_iter = 50;
  double b_m = 1.0;         // scale consistency correction
  bool force_unit_weights = false;  // pin all PS weights to 1 (degeneration studies)
};

// Throws a config error for unusable values; values outside recommended
// ranges but still meaningful are accepted.
void validate(const GMConfig& cfg);

// Two-column sample the outlier diagnostics operate on: row i pairs a
// quantity's value at time k-1 with its value at time k. Rows 0..m-1 are the
// innovation components z - h(x_pred), rows m..m+n-1 the predicted states.
struct ScatterMatrix {
  Mat Z;  // (m + n) x 2
  int m = 0;
  int n = 0;
};

// Per-row outlyingness and the weights derived from it. Rows align with the
// batch-regression rows: measurement rows first, prediction rows after.
struct OutlierDiagnostics {
  Vec ps;                  // projection statistics (NaN where unavailable)
  Vec weights;             // min(1, d^2 / PS^2)
  std::vector<bool> flagged;  // PS^2 above the chi-square threshold
  bool innovation_degenerate = false;
  bool prediction_degenerate = false;
  bool cold_start = false;
};

struct GMEstimate {
  Vec state;
  Mat cov;           // filled by update_covariance; empty from gm_solve alone
  Vec weights;       // the PS weights the solve used
  Vec residuals;     // prewhitened residuals at the solution
  Vec standardized;  // residuals / (scale * weight)
  double scale = 0.0;  // frozen robust scale estimate
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // objective value at start and per iterate
};

double huber_rho(double r, double lambda);
double huber_psi(double r, double lambda);
// psi(r)/r, continuously extended with q(0) = 1.
double huber_weight(double r, double lambda);

// 1.4826 * b_m * median(|residuals|). Throws a zero-scale error when every
// residual is zero.
double robust_scale(const std::vector<double>& residuals, double b_m = 1.0);

// Projection statistics of a point cloud (one point per row): each point's
// largest standardized absolute projection onto the directions from the
// coordinatewise median through each point. Standardization per direction is
// |proj - median| / (1.4826 * MAD); zero-MAD directions are skipped. Needs at
// least 3 points, and some direction with nonzero spread.
Vec projection_statistics(const Mat& cloud);

ScatterMatrix build_scatter_matrix(const Vec& innovation_prev,
                                   const Vec& innovation_curr,
                                   const Vec& prediction_prev,
                                   const Vec& prediction_curr);

// Computes PS separately on the innovation and prediction sub-clouds (their
// values center around different points), then weights and flags. A sub-cloud
// the projection statistics reject falls back to unit weights for its rows,
// with the corresponding degenerate flag set.
OutlierDiagnostics compute_diagnostics(const ScatterMatrix& scatter,
                                       const GMConfig& cfg);

// Iteratively reweighted least squares for the Huber M-estimate of the
// prewhitened regression, with residuals standardized by the frozen robust
// scale times the PS weights. x0 is the starting iterate (the WLS solution in
// the filter pipeline).
GMEstimate gm_solve(const PrewhitenedRegression& reg,
                    const OutlierDiagnostics& diag, const Vec& x0,
                    const GMConfig& cfg);

// Total-influence-function covariance of the estimate:
//   (E[psi^2] / E[psi']^2) (C^T C)^{-1} (C^T Q_w C) (C^T C)^{-1},
// Q_w = diag(w_i^2), expectations under the standard normal in closed form.
Mat update_covariance(const PrewhitenedRegression& reg, const GMEstimate& est,
                      const GMConfig& cfg);

// E[psi^2] / E[psi']^2 at the standard normal for the Huber threshold.
double huber_correction_factor(double lambda);

// Rolling state the filter carries between steps for the scatter matrix.
struct GmHistory {
  bool has_prev = false;
  Vec innovation;  // z - h(x_pred) at the previous step
  Vec prediction;  // x_pred at the previous step
};

struct GmStepResult {
  GMEstimate estimate;
  OutlierDiagnostics diagnostics;
  GaussianBelief predicted;
};

// One full filter step: predict, build the regression form, derive outlier
// diagnostics from the rolling two-sample history, prewhiten, solve, update
// the covariance. The history argument is advanced to the current step. On
// the first step (no history) the diagnostics default to unit weights and the
// update is Huber-only.
GmStepResult gm_ukf_step(const GaussianBelief& belief, const DynamicModel& model,
                         const Vec& z, GmHistory& history, const GMConfig& cfg,
                         const Vec& u = Vec());

}  // namespace gmukf
