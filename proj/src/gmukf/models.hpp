#pragma once

#include "gmukf/types.hpp"

#include <memory>

namespace gmukf {

// Discrete-time stochastic model
//
//   x_k = f(x_{k-1}, u) + w_k,   w_k ~ (0, Q)
//   z_k = h(x_k, u)     + v_k,   v_k ~ (0, R)
//
// f and h are deterministic and side-effect free; Q and R are the nominal
// noise covariances the filters assume. The control input u is optional and
// ignored by the shipped models.
class DynamicModel {
 public:
  virtual ~DynamicModel() = default;

  int state_dim() const { return n_; }
  int measurement_dim() const { return m_; }
  const Mat& process_cov() const { return Q_; }
  const Mat& measurement_cov() const { return R_; }

  virtual Vec f(const Vec& x, const Vec& u = Vec()) const = 0;
  virtual Vec h(const Vec& x, const Vec& u = Vec()) const = 0;

 protected:
  // Validates that Q is symmetric positive semidefinite and R symmetric
  // positive definite; throws Error otherwise.
  DynamicModel(int n, int m, Mat Q, Mat R);

  void check_state(const Vec& x) const;

 private:
  int n_ = 0;
  int m_ = 0;
  Mat Q_;
  Mat R_;
};

// Parameters of the single-machine-infinite-bus swing equation, per-unit
// except where noted.
struct SwingParams {
  double inertia = 3.0;         // H [s]
  double damping = 2.0;         // D
  double mech_power = 0.8;      // Pm
  double internal_emf = 1.05;   // E'
  double bus_voltage = 1.0;     // V
  double reactance = 0.5;       // X
  double sync_speed = 376.99111843077515;  // omega_s [rad/s]
  double dt = 0.01;             // integration step [s]
};

// Second-order generator swing dynamics with state (delta, omega):
//
//   d(delta)/dt = omega_s * (omega - 1)
//   d(omega)/dt = (Pm - Pe - D * (omega - 1)) / (2 H),  Pe = (E'V/X) sin(delta)
//
// discretized by one classical RK4 step per dt. The measurement is (Pe, omega).
// The angle is not wrapped; trajectories that pass +-pi keep accumulating.
class SwingModel : public DynamicModel {
 public:
  SwingModel(const SwingParams& params, Mat Q, Mat R);

  Vec f(const Vec& x, const Vec& u = Vec()) const override;
  Vec h(const Vec& x, const Vec& u = Vec()) const override;

  double electrical_power(double delta) const;

  // Stable equilibrium (asin(Pm X / (E' V)), 1); requires Pm X <= E' V.
  Vec equilibrium() const;

  const SwingParams& params() const { return params_; }

 private:
  Vec deriv(const Vec& x) const;

  SwingParams params_;
};

// Linear-Gaussian model f(x) = A x, h(x) = C x; mainly a test vehicle since
// the UKF reproduces the Kalman filter on it.
class LinearModel : public DynamicModel {
 public:
  LinearModel(Mat A, Mat C, Mat Q, Mat R);

  Vec f(const Vec& x, const Vec& u = Vec()) const override;
  Vec h(const Vec& x, const Vec& u = Vec()) const override;

  const Mat& transition() const { return A_; }
  const Mat& observation() const { return C_; }

 private:
  Mat A_;
  Mat C_;
};

// Stacks `copies` independent replicas of the base measurement channels, as
// when several meters observe the same physical quantities. The state
// equation is untouched; R becomes block-diagonal with `copies` copies of the
// base R.
class ReplicatedMeasurementModel : public DynamicModel {
 public:
  ReplicatedMeasurementModel(std::shared_ptr<const DynamicModel> base, int copies);

  Vec f(const Vec& x, const Vec& u = Vec()) const override;
  Vec h(const Vec& x, const Vec& u = Vec()) const override;

  const DynamicModel& base() const { return *base_; }
  int copies() const { return copies_; }

 private:
  std::shared_ptr<const DynamicModel> base_;
  int copies_ = 1;
};

// One step of ground truth: f(x, u) + w, with dimension checks.
Vec step_truth(const DynamicModel& model, const Vec& x, const Vec& w, const Vec& u = Vec());

// One measurement of ground truth: h(x, u) + v, with dimension checks.
Vec observe(const DynamicModel& model, const Vec& x, const Vec& v, const Vec& u = Vec());

}  // namespace gmukf
