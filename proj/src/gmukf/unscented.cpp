#include "gmukf/unscented.hpp"

#include <cmath>
#include <string>

namespace gmukf {

namespace {

struct PointMoments {
  Vec mean;
  Mat scatter;
};

PointMoments input_moments(const SigmaPointSet& points) {
  const int count = static_cast<int>(points.points.size());
  const int n = static_cast<int>(points.points.front().size());
  PointMoments m;
  m.mean = Vec::Zero(n);
  for (int i = 0; i < count; ++i) m.mean += points.weights[i] * points.points[i];
  m.scatter = Mat::Zero(n, n);
  for (int i = 0; i < count; ++i) {
    const Vec d = points.points[i] - m.mean;
    m.scatter += points.weights[i] * (d * d.transpose());
  }
  return m;
}

void check_points(const SigmaPointSet& points) {
  if (points.points.empty())
    fail(ErrorCode::invalid_argument, "empty sigma-point set");
  if (points.weights.size() != static_cast<Eigen::Index>(points.points.size()))
    fail(ErrorCode::dimension_mismatch, "sigma-point weights size mismatch");
}

}  // namespace

SigmaPointSet generate_sigma_points(const GaussianBelief& belief) {
  const int n = static_cast<int>(belief.mean.size());
  if (n < 1) fail(ErrorCode::invalid_argument, "belief has empty mean");
  if (belief.cov.rows() != n || belief.cov.cols() != n)
    fail(ErrorCode::dimension_mismatch, "belief covariance must be n x n");

  const Mat scaled = static_cast<double>(n) * belief.cov;
  Mat L;
  bool ok = false;
  double jitter = 0.0;
  for (;;) {
    Eigen::LLT<Mat> llt(jitter == 0.0
                            ? scaled
                            : Mat(scaled + jitter * Mat::Identity(n, n)));
    if (llt.info() == Eigen::Success) {
      L = llt.matrixL();
      ok = true;
      break;
    }
    jitter = (jitter == 0.0) ? 1e-12 : jitter * 10.0;
    if (jitter > 1e-6) break;
  }
  if (!ok)
    fail(ErrorCode::singular_covariance,
         "sigma points: covariance not positive definite after jitter");

  SigmaPointSet set;
  set.points.resize(2 * n);
  for (int i = 0; i < n; ++i) {
    set.points[i] = belief.mean + L.col(i);
    set.points[n + i] = belief.mean - L.col(i);
  }
  set.weights = Vec::Constant(2 * n, 1.0 / (2.0 * n));
  return set;
}

UnscentedMoments unscented_transform(const SigmaPointSet& points,
                                     const std::function<Vec(const Vec&)>& g,
                                     const Mat& additive_cov) {
  check_points(points);
  const int count = static_cast<int>(points.points.size());
  const int n = static_cast<int>(points.points.front().size());

  std::vector<Vec> mapped(count);
  for (int i = 0; i < count; ++i) mapped[i] = g(points.points[i]);
  const int p = static_cast<int>(mapped.front().size());

  UnscentedMoments out;
  out.mean = Vec::Zero(p);
  for (int i = 0; i < count; ++i) out.mean += points.weights[i] * mapped[i];

  Vec x_mean = Vec::Zero(n);
  for (int i = 0; i < count; ++i) x_mean += points.weights[i] * points.points[i];

  out.cov = Mat::Zero(p, p);
  out.cross_cov = Mat::Zero(n, p);
  for (int i = 0; i < count; ++i) {
    const Vec dy = mapped[i] - out.mean;
    const Vec dx = points.points[i] - x_mean;
    out.cov += points.weights[i] * (dy * dy.transpose());
    out.cross_cov += points.weights[i] * (dx * dy.transpose());
  }
  if (additive_cov.size() != 0) {
    if (additive_cov.rows() != p || additive_cov.cols() != p)
      fail(ErrorCode::dimension_mismatch, "additive covariance size mismatch");
    out.cov += additive_cov;
  }
  symmetrize(out.cov);
  return out;
}

StatisticalLinearization statistical_linearize(
    const SigmaPointSet& points, const std::function<Vec(const Vec&)>& g) {
  check_points(points);
  const UnscentedMoments moments = unscented_transform(points, g);
  const PointMoments in = input_moments(points);

  Eigen::LLT<Mat> llt(in.scatter);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::singular_covariance,
         "statistical linearization: input scatter not invertible");

  StatisticalLinearization lin;
  lin.A = llt.solve(moments.cross_cov).transpose();  // P_xy^T P_xx^{-1}
  lin.b = moments.mean - lin.A * in.mean;

  // Error covariance from the fit residuals rather than the algebraic
  // identity, so reconstruction checks exercise a distinct route.
  const int p = static_cast<int>(moments.mean.size());
  lin.error_cov = Mat::Zero(p, p);
  const int count = static_cast<int>(points.points.size());
  for (int i = 0; i < count; ++i) {
    const Vec resid = g(points.points[i]) - lin.A * points.points[i] - lin.b;
    lin.error_cov += points.weights[i] * (resid * resid.transpose());
  }
  symmetrize(lin.error_cov);
  return lin;
}

GaussianBelief ukf_predict(const GaussianBelief& belief,
                           const DynamicModel& model, const Vec& u) {
  const SigmaPointSet points = generate_sigma_points(belief);
  const UnscentedMoments moments = unscented_transform(
      points, [&](const Vec& x) { return model.f(x, u); }, model.process_cov());
  return {moments.mean, moments.cov};
}

GaussianBelief ukf_update(const GaussianBelief& predicted,
                          const DynamicModel& model, const Vec& z,
                          const Vec& u) {
  if (z.size() != model.measurement_dim())
    fail(ErrorCode::dimension_mismatch, "measurement size mismatch");

  const SigmaPointSet points = generate_sigma_points(predicted);
  const UnscentedMoments moments =
      unscented_transform(points, [&](const Vec& x) { return model.h(x, u); },
                          model.measurement_cov());

  Eigen::LLT<Mat> llt(moments.cov);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::singular_innovation,
         "measurement update: innovation covariance not invertible");

  // K = P_xz P_zz^{-1}, realized as a solve against P_zz.
  const Mat K = llt.solve(moments.cross_cov.transpose()).transpose();

  GaussianBelief posterior;
  posterior.mean = predicted.mean + K * (z - moments.mean);
  posterior.cov = predicted.cov - K * moments.cov * K.transpose();
  symmetrize(posterior.cov);
  return posterior;
}

}  // namespace gmukf
