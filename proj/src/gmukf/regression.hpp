#pragma once

#include "gmukf/models.hpp"
#include "gmukf/types.hpp"

namespace gmukf {

// Batch-mode regression form of the measurement update. Stacking the
// statistically linearized measurement equation on top of the prediction
// pseudo-measurement gives
//
//   z_tilde = H_tilde x + e,  Cov(e) = W = blkdiag(Sigma, P_pred),
//
// with z_tilde = [z + H x_pred - z_hat; x_pred], H_tilde = [H; I],
// H = P_xz^T P_pred^{-1} and Sigma = R + R_tilde the measurement noise plus
// linearization-error covariance.
struct BatchRegression {
  Vec z_tilde;  // (m + n)
  Mat H_tilde;  // (m + n) x n
  Mat W;        // (m + n) x (m + n), block diagonal
  Mat S;        // lower Cholesky factor of W
};

// The regression after left-multiplying by S^{-1}: y = C x + e with
// Cov(e) = I.
struct PrewhitenedRegression {
  Vec y;
  Mat C;
};

struct WlsSolution {
  Vec state;
  Mat cov;  // (H_tilde^T W^{-1} H_tilde)^{-1}
};

// Builds the regression form at a predicted belief. The linearization-error
// covariance R_tilde is the transformed-point scatter minus H P_pred H^T,
// clipped to positive semidefinite; Sigma = R + R_tilde.
BatchRegression build_batch_regression(const GaussianBelief& predicted,
                                       const DynamicModel& model, const Vec& z,
                                       const Vec& u = Vec());

// y = S^{-1} z_tilde and C = S^{-1} H_tilde by forward substitution; the
// factor is never inverted explicitly.
PrewhitenedRegression prewhiten(const BatchRegression& reg);

// Ordinary least squares on the prewhitened system, which is weighted least
// squares with weight W^{-1} on the original one. Reproduces the unscented
// measurement update exactly.
WlsSolution wls_solve(const BatchRegression& reg);

// Same solve for callers that already hold the prewhitened system.
WlsSolution wls_solve_prewhitened(const PrewhitenedRegression& white);

}  // namespace gmukf
