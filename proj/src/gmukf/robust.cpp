#include "gmukf/robust.hpp"

#include "gmukf/stats.hpp"
#include "gmukf/unscented.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace gmukf {

namespace {

constexpr double kMadConsistency = 1.4826;
constexpr double kScaleFloor = 1e-12;

double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

void validate(const GMConfig& cfg) {
  if (!(cfg.lambda > 0.0))
    fail(ErrorCode::config_error, "lambda must be positive");
  if (!(cfg.d > 0.0)) fail(ErrorCode::config_error, "d must be positive");
  if (cfg.eta_df != 2 && cfg.eta_df != 4)
    fail(ErrorCode::config_error, "eta_df must be 2 or 4");
  if (!(cfg.eta_quantile > 0.0 && cfg.eta_quantile < 1.0))
    fail(ErrorCode::config_error, "eta_quantile must be in (0, 1)");
  if (!(cfg.irls_tol > 0.0))
    fail(ErrorCode::config_error, "irls_tol must be positive");
  if (cfg.irls_max_iter < 1)
    fail(ErrorCode::config_error, "irls_max_iter must be at least 1");
  if (!(cfg.b_m > 0.0)) fail(ErrorCode::config_error, "b_m must be positive");
}

double huber_rho(double r, double lambda) {
  const double a = std::abs(r);
  if (a < lambda) return 0.5 * r * r;
  return lambda * a - 0.5 * lambda * lambda;
}

double huber_psi(double r, double lambda) {
  if (std::abs(r) < lambda) return r;
  return r > 0.0 ? lambda : -lambda;
}

double huber_weight(double r, double lambda) {
  const double a = std::abs(r);
  if (a < lambda) return 1.0;
  return lambda / a;
}

double robust_scale(const std::vector<double>& residuals, double b_m) {
  if (residuals.empty())
    fail(ErrorCode::invalid_argument, "robust_scale of an empty sample");
  std::vector<double> mag(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i)
    mag[i] = std::abs(residuals[i]);
  const double med = median(std::move(mag));
  if (med == 0.0)
    fail(ErrorCode::zero_scale, "robust_scale: all residuals are zero");
  return kMadConsistency * b_m * med;
}

Vec projection_statistics(const Mat& cloud) {
  const int count = static_cast<int>(cloud.rows());
  const int dim = static_cast<int>(cloud.cols());
  if (count < 3)
    fail(ErrorCode::degenerate_cloud,
         "projection statistics need at least 3 points, got " +
             std::to_string(count));

  Vec center(dim);
  {
    std::vector<double> coord(count);
    for (int j = 0; j < dim; ++j) {
      for (int i = 0; i < count; ++i) coord[i] = cloud(i, j);
      center[j] = median(coord);
    }
  }

  Vec ps = Vec::Zero(count);
  bool any_direction = false;
  std::vector<double> proj(count), dev(count);
  for (int j = 0; j < count; ++j) {
    Vec dir = cloud.row(j).transpose() - center;
    const double norm = dir.norm();
    if (norm == 0.0) continue;
    dir /= norm;

    for (int i = 0; i < count; ++i) proj[i] = cloud.row(i).dot(dir);
    const double med = median(proj);
    for (int i = 0; i < count; ++i) dev[i] = std::abs(proj[i] - med);
    const double mad = median(dev);
    if (mad == 0.0) continue;

    any_direction = true;
    const double denom = kMadConsistency * mad;
    for (int i = 0; i < count; ++i) ps[i] = std::max(ps[i], dev[i] / denom);
  }
  if (!any_direction)
    fail(ErrorCode::degenerate_cloud,
         "projection statistics: no usable direction in the cloud");
  return ps;
}

ScatterMatrix build_scatter_matrix(const Vec& innovation_prev,
                                   const Vec& innovation_curr,
                                   const Vec& prediction_prev,
                                   const Vec& prediction_curr) {
  const int m = static_cast<int>(innovation_curr.size());
  const int n = static_cast<int>(prediction_curr.size());
  if (innovation_prev.size() != m || prediction_prev.size() != n)
    fail(ErrorCode::dimension_mismatch,
         "scatter matrix: mismatched sample sizes across time");

  ScatterMatrix scatter;
  scatter.m = m;
  scatter.n = n;
  scatter.Z.resize(m + n, 2);
  scatter.Z.col(0).head(m) = innovation_prev;
  scatter.Z.col(1).head(m) = innovation_curr;
  scatter.Z.col(0).tail(n) = prediction_prev;
  scatter.Z.col(1).tail(n) = prediction_curr;
  return scatter;
}

OutlierDiagnostics compute_diagnostics(const ScatterMatrix& scatter,
                                       const GMConfig& cfg) {
  validate(cfg);
  const int m = scatter.m;
  const int n = scatter.n;
  if (scatter.Z.rows() != m + n || scatter.Z.cols() != 2)
    fail(ErrorCode::dimension_mismatch, "scatter matrix shape mismatch");

  OutlierDiagnostics diag;
  diag.ps = Vec::Constant(m + n, quiet_nan());
  diag.weights = Vec::Ones(m + n);
  diag.flagged.assign(m + n, false);

  const double eta = chi_square_quantile(cfg.eta_df, cfg.eta_quantile);
  const double d2 = cfg.d * cfg.d;

  const auto apply = [&](int offset, int rows, bool& degenerate) {
    try {
      const Vec ps = projection_statistics(scatter.Z.middleRows(offset, rows));
      for (int i = 0; i < rows; ++i) {
        const double ps2 = ps[i] * ps[i];
        diag.ps[offset + i] = ps[i];
        diag.weights[offset + i] = std::min(1.0, d2 / ps2);
        diag.flagged[offset + i] = ps2 > eta;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_cloud) throw;
      degenerate = true;  // fall back to unit weights for these rows
    }
  };
  apply(0, m, diag.innovation_degenerate);
  apply(m, n, diag.prediction_degenerate);

  if (cfg.force_unit_weights) diag.weights.setOnes();
  return diag;
}

namespace {

double gm_objective(const PrewhitenedRegression& reg, const Vec& weights,
                    const Vec& x, double scale, double lambda) {
  const Vec r = reg.y - reg.C * x;
  double J = 0.0;
  for (int i = 0; i < r.size(); ++i) {
    const double w = weights[i];
    J += w * w * huber_rho(r[i] / (scale * w), lambda);
  }
  return J;
}

}  // namespace

GMEstimate gm_solve(const PrewhitenedRegression& reg,
                    const OutlierDiagnostics& diag, const Vec& x0,
                    const GMConfig& cfg) {
  validate(cfg);
  const int rows = static_cast<int>(reg.y.size());
  const int n = static_cast<int>(reg.C.cols());
  if (reg.C.rows() != rows)
    fail(ErrorCode::dimension_mismatch, "gm_solve: y and C row mismatch");
  if (x0.size() != n)
    fail(ErrorCode::dimension_mismatch, "gm_solve: x0 size mismatch");
  if (diag.weights.size() != rows)
    fail(ErrorCode::dimension_mismatch, "gm_solve: weights size mismatch");
  for (int i = 0; i < rows; ++i)
    if (!(diag.weights[i] > 0.0))
      fail(ErrorCode::invalid_argument, "gm_solve: weights must be positive");

  GMEstimate est;
  est.weights = diag.weights;

  // Scale frozen from the starting residuals, floored against degeneracy.
  Vec r = reg.y - reg.C * x0;
  {
    double s = 0.0;
    try {
      std::vector<double> rv(r.data(), r.data() + r.size());
      s = robust_scale(rv, cfg.b_m);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::zero_scale) throw;
    }
    est.scale = std::max(s, kScaleFloor);
  }

  Vec x = x0;
  est.objective.push_back(
      gm_objective(reg, diag.weights, x, est.scale, cfg.lambda));

  for (int iter = 1; iter <= cfg.irls_max_iter; ++iter) {
    r = reg.y - reg.C * x;
    Vec q(rows);
    for (int i = 0; i < rows; ++i)
      q[i] = huber_weight(r[i] / (est.scale * diag.weights[i]), cfg.lambda);

    // Reweighted least-squares step via QR on the row-scaled system. The
    // sqrt(q) scaling keeps the solve backward-stable, and with every weight
    // at one it reproduces the WLS starting point bit for bit.
    const Vec sq = q.cwiseSqrt();
    const Mat Cw = sq.asDiagonal() * reg.C;
    const Vec yw = sq.asDiagonal() * reg.y;
    Eigen::ColPivHouseholderQR<Mat> qr(Cw);
    if (qr.rank() < n)
      fail(ErrorCode::rank_deficient,
           "gm_solve: reweighted regression is rank deficient");
    const Vec x_next = qr.solve(yw);

    const double obj_next =
        gm_objective(reg, diag.weights, x_next, est.scale, cfg.lambda);
    const double step = (x_next - x).cwiseAbs().maxCoeff();
    const double obj_slack =
        1e-12 * std::max(1.0, std::abs(est.objective.back()));
    if (obj_next > est.objective.back() + obj_slack) {
      // The majorization step cannot increase the objective in exact
      // arithmetic, so a distinctly worse iterate means the iteration has
      // hit its numerical floor: keep the current iterate. Sub-slack wiggle
      // is ordinary roundoff and the iteration continues through it.
      est.converged = est.converged || step <= cfg.irls_tol;
      break;
    }
    x = x_next;
    est.iterations = iter;
    est.objective.push_back(obj_next);
    if (step <= cfg.irls_tol) {
      est.converged = true;
      break;
    }
  }

  est.state = x;
  est.residuals = reg.y - reg.C * x;
  est.standardized = Vec(rows);
  for (int i = 0; i < rows; ++i)
    est.standardized[i] = est.residuals[i] / (est.scale * diag.weights[i]);
  return est;
}

double huber_correction_factor(double lambda) {
  if (!(lambda > 0.0))
    fail(ErrorCode::invalid_argument, "lambda must be positive");
  const double Phi = normal_cdf(lambda);
  const double phi = normal_pdf(lambda);
  const double e_psi_prime = 2.0 * Phi - 1.0;
  const double e_psi_sq =
      (2.0 * Phi - 1.0) - 2.0 * lambda * phi + 2.0 * lambda * lambda * (1.0 - Phi);
  return e_psi_sq / (e_psi_prime * e_psi_prime);
}

Mat update_covariance(const PrewhitenedRegression& reg, const GMEstimate& est,
                      const GMConfig& cfg) {
  if (est.weights.size() != reg.C.rows())
    fail(ErrorCode::dimension_mismatch,
         "update_covariance: weights size mismatch");

  Eigen::LLT<Mat> llt(reg.C.transpose() * reg.C);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::rank_deficient, "update_covariance: C^T C is singular");

  const Vec w2 = est.weights.array().square();
  const Mat M = reg.C.transpose() * w2.asDiagonal() * reg.C;
  // (C^T C)^{-1} M (C^T C)^{-1} via two solves against the factorization.
  Mat cov = llt.solve(llt.solve(M).transpose());
  cov *= huber_correction_factor(cfg.lambda);
  symmetrize(cov);
  return cov;
}

GmStepResult gm_ukf_step(const GaussianBelief& belief, const DynamicModel& model,
                         const Vec& z, GmHistory& history, const GMConfig& cfg,
                         const Vec& u) {
  validate(cfg);
  const int m = model.measurement_dim();
  const int n = model.state_dim();

  GmStepResult result;
  result.predicted = ukf_predict(belief, model, u);
  const Vec innovation = z - model.h(result.predicted.mean, u);

  if (history.has_prev) {
    const ScatterMatrix scatter =
        build_scatter_matrix(history.innovation, innovation,
                             history.prediction, result.predicted.mean);
    result.diagnostics = compute_diagnostics(scatter, cfg);
  } else {
    result.diagnostics.ps = Vec::Constant(m + n, quiet_nan());
    result.diagnostics.weights = Vec::Ones(m + n);
    result.diagnostics.flagged.assign(m + n, false);
    result.diagnostics.cold_start = true;
  }

  const BatchRegression reg = build_batch_regression(result.predicted, model, z, u);
  const PrewhitenedRegression white = prewhiten(reg);
  const WlsSolution wls = wls_solve_prewhitened(white);

  result.estimate = gm_solve(white, result.diagnostics, wls.state, cfg);
  result.estimate.cov = update_covariance(white, result.estimate, cfg);

  history.has_prev = true;
  history.innovation = innovation;
  history.prediction = result.predicted.mean;
  return result;
}

}  // namespace gmukf
