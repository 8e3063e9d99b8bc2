#include "gmukf/models.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace gmukf {

namespace {

void require_symmetric(const Mat& m, const char* name) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    fail(ErrorCode::invalid_argument, std::string(name) + " must be symmetric");
}

void require_psd(const Mat& m, const char* name) {
  require_symmetric(m, name);
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    fail(ErrorCode::invalid_argument,
         std::string(name) + " must be positive semidefinite");
}

void require_pd(const Mat& m, const char* name) {
  require_symmetric(m, name);
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::invalid_argument,
         std::string(name) + " must be positive definite");
}

}  // namespace

DynamicModel::DynamicModel(int n, int m, Mat Q, Mat R)
    : n_(n), m_(m), Q_(std::move(Q)), R_(std::move(R)) {
  if (n_ < 1 || m_ < 1)
    fail(ErrorCode::invalid_argument, "model dimensions must be positive");
  if (Q_.rows() != n_ || Q_.cols() != n_)
    fail(ErrorCode::dimension_mismatch, "Q must be n x n");
  if (R_.rows() != m_ || R_.cols() != m_)
    fail(ErrorCode::dimension_mismatch, "R must be m x m");
  require_psd(Q_, "Q");
  require_pd(R_, "R");
  symmetrize(Q_);
  symmetrize(R_);
}

void DynamicModel::check_state(const Vec& x) const {
  if (x.size() != n_)
    fail(ErrorCode::dimension_mismatch,
         "state has size " + std::to_string(x.size()) + ", expected " +
             std::to_string(n_));
}

SwingModel::SwingModel(const SwingParams& params, Mat Q, Mat R)
    : DynamicModel(2, 2, std::move(Q), std::move(R)), params_(params) {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0))
      fail(ErrorCode::invalid_argument,
           std::string("SwingModel parameter ") + name + " must be positive");
  };
  positive(params_.inertia, "inertia");
  positive(params_.damping, "damping");
  positive(params_.mech_power, "mech_power");
  positive(params_.internal_emf, "internal_emf");
  positive(params_.bus_voltage, "bus_voltage");
  positive(params_.reactance, "reactance");
  positive(params_.sync_speed, "sync_speed");
  positive(params_.dt, "dt");
}

Vec SwingModel::deriv(const Vec& x) const {
  const double delta = x[0];
  const double omega = x[1];
  Vec d(2);
  d[0] = params_.sync_speed * (omega - 1.0);
  d[1] = (params_.mech_power - electrical_power(delta) -
          params_.damping * (omega - 1.0)) /
         (2.0 * params_.inertia);
  return d;
}

Vec SwingModel::f(const Vec& x, const Vec&) const {
  check_state(x);
  const double dt = params_.dt;
  const Vec k1 = deriv(x);
  const Vec k2 = deriv(x + 0.5 * dt * k1);
  const Vec k3 = deriv(x + 0.5 * dt * k2);
  const Vec k4 = deriv(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vec SwingModel::h(const Vec& x, const Vec&) const {
  check_state(x);
  Vec z(2);
  z[0] = electrical_power(x[0]);
  z[1] = x[1];
  return z;
}

double SwingModel::electrical_power(double delta) const {
  return params_.internal_emf * params_.bus_voltage / params_.reactance *
         std::sin(delta);
}

Vec SwingModel::equilibrium() const {
  const double ratio = params_.mech_power * params_.reactance /
                       (params_.internal_emf * params_.bus_voltage);
  if (ratio > 1.0)
    fail(ErrorCode::invalid_argument,
         "no equilibrium: mechanical power exceeds the transfer limit");
  Vec x(2);
  x[0] = std::asin(ratio);
  x[1] = 1.0;
  return x;
}

LinearModel::LinearModel(Mat A, Mat C, Mat Q, Mat R)
    : DynamicModel(static_cast<int>(A.rows()), static_cast<int>(C.rows()),
                   std::move(Q), std::move(R)),
      A_(std::move(A)),
      C_(std::move(C)) {
  if (A_.rows() != A_.cols())
    fail(ErrorCode::dimension_mismatch, "A must be square");
  if (C_.cols() != A_.rows())
    fail(ErrorCode::dimension_mismatch, "C must have n columns");
}

Vec LinearModel::f(const Vec& x, const Vec&) const {
  check_state(x);
  return A_ * x;
}

Vec LinearModel::h(const Vec& x, const Vec&) const {
  check_state(x);
  return C_ * x;
}

namespace {

Mat replicate_cov(const Mat& base, int copies) {
  const int m = static_cast<int>(base.rows());
  Mat out = Mat::Zero(m * copies, m * copies);
  for (int c = 0; c < copies; ++c) out.block(c * m, c * m, m, m) = base;
  return out;
}

}  // namespace

ReplicatedMeasurementModel::ReplicatedMeasurementModel(
    std::shared_ptr<const DynamicModel> base, int copies)
    : DynamicModel(base ? base->state_dim() : 1,
                   base ? base->measurement_dim() * std::max(copies, 1) : 1,
                   base ? base->process_cov() : Mat::Identity(1, 1),
                   base ? replicate_cov(base->measurement_cov(),
                                        std::max(copies, 1))
                        : Mat::Identity(1, 1)),
      base_(std::move(base)),
      copies_(copies) {
  if (!base_) fail(ErrorCode::invalid_argument, "base model must not be null");
  if (copies_ < 1)
    fail(ErrorCode::invalid_argument, "copies must be at least 1");
}

Vec ReplicatedMeasurementModel::f(const Vec& x, const Vec& u) const {
  return base_->f(x, u);
}

Vec ReplicatedMeasurementModel::h(const Vec& x, const Vec& u) const {
  const Vec z = base_->h(x, u);
  const int m = static_cast<int>(z.size());
  Vec out(m * copies_);
  for (int c = 0; c < copies_; ++c) out.segment(c * m, m) = z;
  return out;
}

Vec step_truth(const DynamicModel& model, const Vec& x, const Vec& w,
               const Vec& u) {
  if (x.size() != model.state_dim() || w.size() != model.state_dim())
    fail(ErrorCode::dimension_mismatch, "step_truth: state/noise size mismatch");
  return model.f(x, u) + w;
}

Vec observe(const DynamicModel& model, const Vec& x, const Vec& v,
            const Vec& u) {
  if (x.size() != model.state_dim() || v.size() != model.measurement_dim())
    fail(ErrorCode::dimension_mismatch, "observe: state/noise size mismatch");
  return model.h(x, u) + v;
}

}  // namespace gmukf
