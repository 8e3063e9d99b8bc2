#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gmukf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Failure categories thrown by the core and mirrored one-to-one by the C API
// status codes.
enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  singular_covariance,
  singular_innovation,
  rank_deficient,
  degenerate_cloud,
  zero_scale,
  config_error,
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

// Gaussian state estimate (mean and covariance).
struct GaussianBelief {
  Vec mean;
  Mat cov;
};

// Forces exact numerical symmetry after updates that are symmetric only in
// exact arithmetic.
inline void symmetrize(Mat& m) { m = ((m + m.transpose()) * 0.5).eval(); }

}  // namespace gmukf
