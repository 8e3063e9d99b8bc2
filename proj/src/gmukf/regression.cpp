#include "gmukf/regression.hpp"

#include "gmukf/unscented.hpp"

namespace gmukf {

namespace {

// Clips negative eigenvalues to zero; rounding can leave the linearization
// error covariance slightly indefinite.
Mat clip_to_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  Vec ev = es.eigenvalues().cwiseMax(0.0);
  Mat out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  symmetrize(out);
  return out;
}

Mat lower_cholesky(const Mat& m, const char* what) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::singular_covariance,
         std::string(what) + ": block not positive definite");
  return llt.matrixL();
}

}  // namespace

BatchRegression build_batch_regression(const GaussianBelief& predicted,
                                       const DynamicModel& model, const Vec& z,
                                       const Vec& u) {
  const int n = model.state_dim();
  const int m = model.measurement_dim();
  if (z.size() != m)
    fail(ErrorCode::dimension_mismatch, "measurement size mismatch");
  if (predicted.mean.size() != n)
    fail(ErrorCode::dimension_mismatch, "predicted mean size mismatch");

  const SigmaPointSet points = generate_sigma_points(predicted);
  // Scatter-only transform of h; R enters through Sigma below.
  const UnscentedMoments moments = unscented_transform(
      points, [&](const Vec& x) { return model.h(x, u); });

  Eigen::LLT<Mat> pred_llt(predicted.cov);
  if (pred_llt.info() != Eigen::Success)
    fail(ErrorCode::singular_covariance,
         "batch regression: predicted covariance not invertible");

  const Mat H = pred_llt.solve(moments.cross_cov).transpose();

  // R_tilde = P_yy - H P_pred H^T; H P_pred = P_xz^T, so the product
  // reduces to H P_xz.
  Mat R_tilde = moments.cov - H * moments.cross_cov;
  symmetrize(R_tilde);
  R_tilde = clip_to_psd(R_tilde);
  const Mat Sigma = model.measurement_cov() + R_tilde;

  BatchRegression reg;
  reg.z_tilde.resize(m + n);
  reg.z_tilde.head(m) = z + H * predicted.mean - moments.mean;
  reg.z_tilde.tail(n) = predicted.mean;

  reg.H_tilde = Mat::Zero(m + n, n);
  reg.H_tilde.topRows(m) = H;
  reg.H_tilde.bottomRows(n) = Mat::Identity(n, n);

  reg.W = Mat::Zero(m + n, m + n);
  reg.W.topLeftCorner(m, m) = Sigma;
  reg.W.bottomRightCorner(n, n) = predicted.cov;

  // Cholesky of a block-diagonal matrix is block diagonal in its blocks.
  reg.S = Mat::Zero(m + n, m + n);
  reg.S.topLeftCorner(m, m) = lower_cholesky(Sigma, "batch regression Sigma");
  reg.S.bottomRightCorner(n, n) =
      lower_cholesky(predicted.cov, "batch regression P_pred");
  return reg;
}

PrewhitenedRegression prewhiten(const BatchRegression& reg) {
  PrewhitenedRegression white;
  const auto L = reg.S.triangularView<Eigen::Lower>();
  white.y = L.solve(reg.z_tilde);
  white.C = L.solve(reg.H_tilde);
  return white;
}

WlsSolution wls_solve_prewhitened(const PrewhitenedRegression& white) {
  const int n = static_cast<int>(white.C.cols());
  Eigen::ColPivHouseholderQR<Mat> qr(white.C);
  if (qr.rank() < n)
    fail(ErrorCode::rank_deficient, "WLS: regression matrix is rank deficient");

  WlsSolution sol;
  sol.state = qr.solve(white.y);
  const Mat G = white.C.transpose() * white.C;
  sol.cov = Eigen::LLT<Mat>(G).solve(Mat::Identity(n, n));
  symmetrize(sol.cov);
  return sol;
}

WlsSolution wls_solve(const BatchRegression& reg) {
  return wls_solve_prewhitened(prewhiten(reg));
}

}  // namespace gmukf
