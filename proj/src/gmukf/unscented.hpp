#pragma once

#include "gmukf/models.hpp"
#include "gmukf/types.hpp"

#include <functional>
#include <vector>

namespace gmukf {

// Symmetric sigma-point set: the 2n points x +- col_i(chol(n P)), all with
// weight 1/(2n). There is no center point and no scaling parameters.
struct SigmaPointSet {
  std::vector<Vec> points;  // points[i] and points[n + i] form the +- pair
  Vec weights;              // 2n entries, each 1/(2n)
};

// First two moments of a transformed sigma-point set.
struct UnscentedMoments {
  Vec mean;       // sum_i w_i y_i
  Mat cov;        // scatter of the transformed points, plus additive_cov if given
  Mat cross_cov;  // sum_i w_i (x_i - x_mean)(y_i - y_mean)^T
};

// Linear regression of a transformed point set onto its inputs:
//   y ~ A x + b + zeta,  A = P_xy^T P_xx^{-1},  b = y_mean - A x_mean,
// with error_cov the weighted outer-product sum of the fit residuals.
struct StatisticalLinearization {
  Mat A;
  Vec b;
  Mat error_cov;
};

// Generates the sigma points of a belief. If the Cholesky factorization of
// n*P fails, a jitter eps*I is added to n*P with eps escalating by decades
// from 1e-12 to 1e-6 before giving up with a singular-covariance error.
SigmaPointSet generate_sigma_points(const GaussianBelief& belief);

// Propagates the points through g and forms mean, covariance and input-output
// cross covariance. additive_cov, when non-empty, is added to the covariance.
UnscentedMoments unscented_transform(const SigmaPointSet& points,
                                     const std::function<Vec(const Vec&)>& g,
                                     const Mat& additive_cov = Mat());

StatisticalLinearization statistical_linearize(
    const SigmaPointSet& points, const std::function<Vec(const Vec&)>& g);

// Time update: propagates the belief through f and adds Q.
GaussianBelief ukf_predict(const GaussianBelief& belief,
                           const DynamicModel& model, const Vec& u = Vec());

// Measurement update with gain K = P_xz P_zz^{-1} and covariance
// P = P_pred - K P_zz K^T (symmetrized).
GaussianBelief ukf_update(const GaussianBelief& predicted,
                          const DynamicModel& model, const Vec& z,
                          const Vec& u = Vec());

}  // namespace gmukf
