#include "gmukf/noise.hpp"

#include <cmath>
#include <string>

namespace gmukf {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kCauchyPseudoSigma = 2.2;  // pseudo-sigma multiplier

// splitmix64; also the mixing function behind derive_seed.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void validate(const NoiseSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoise>) {
          if (!(s.sigma > 0.0))
            fail(ErrorCode::config_error, "gaussian sigma must be positive");
        } else if constexpr (std::is_same_v<T, MixtureNoise>) {
          if (!(s.weight1 > 0.0 && s.weight1 < 1.0))
            fail(ErrorCode::config_error, "mixture weight1 must be in (0, 1)");
          if (!(s.sigma1 > 0.0 && s.sigma2 > 0.0))
            fail(ErrorCode::config_error, "mixture sigmas must be positive");
        } else if constexpr (std::is_same_v<T, LaplaceNoise>) {
          if (!(s.b > 0.0))
            fail(ErrorCode::config_error, "laplace b must be positive");
        } else {
          if (!(s.gamma > 0.0))
            fail(ErrorCode::config_error, "cauchy gamma must be positive");
        }
      },
      spec);
}

double nominal_variance(const NoiseSpec& spec) {
  validate(spec);
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoise>) {
          return s.sigma * s.sigma;
        } else if constexpr (std::is_same_v<T, MixtureNoise>) {
          const double w1 = s.weight1;
          const double w2 = 1.0 - w1;
          const double mean = w1 * s.mean1 + w2 * s.mean2;
          const double second = w1 * (s.sigma1 * s.sigma1 + s.mean1 * s.mean1) +
                                w2 * (s.sigma2 * s.sigma2 + s.mean2 * s.mean2);
          return second - mean * mean;
        } else if constexpr (std::is_same_v<T, LaplaceNoise>) {
          return 2.0 * s.b * s.b;
        } else {
          const double pseudo = kCauchyPseudoSigma * s.gamma;
          return pseudo * pseudo;
        }
      },
      spec);
}

Mat nominal_covariance(const std::vector<NoiseSpec>& specs) {
  const int m = static_cast<int>(specs.size());
  Mat R = Mat::Zero(m, m);
  for (int i = 0; i < m; ++i) R(i, i) = nominal_variance(specs[i]);
  return R;
}

double RngStream::uniform() {
  // 53-bit mantissa in (0, 1): offset by half an ulp so 0 is excluded.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replicate,
                          StreamRole role, std::uint64_t channel) {
  std::uint64_t s = mix64(master ^ 0x5851f42d4c957f2dULL);
  s = mix64(s ^ replicate);
  s = mix64(s ^ (static_cast<std::uint64_t>(role) << 32));
  s = mix64(s ^ channel);
  return s;
}

double laplace_quantile(double u, double b) {
  const double c = u - 0.5;
  const double sign = c >= 0.0 ? 1.0 : -1.0;
  return -b * sign * std::log1p(-2.0 * std::abs(c));
}

double cauchy_quantile(double u, double gamma) {
  return gamma * std::tan(M_PI * (u - 0.5));
}

double sample(const NoiseSpec& spec, RngStream& stream) {
  return std::visit(
      [&stream](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoise>) {
          return s.sigma * stream.normal();
        } else if constexpr (std::is_same_v<T, MixtureNoise>) {
          const double mean = s.weight1 * s.mean1 + (1.0 - s.weight1) * s.mean2;
          const bool first = stream.uniform() < s.weight1;
          const double mu = first ? s.mean1 : s.mean2;
          const double sigma = first ? s.sigma1 : s.sigma2;
          return mu + sigma * stream.normal() - mean;
        } else if constexpr (std::is_same_v<T, LaplaceNoise>) {
          return laplace_quantile(stream.uniform(), s.b);
        } else {
          return cauchy_quantile(stream.uniform(), s.gamma);
        }
      },
      spec);
}

void validate(const OutlierSchedule& schedule, int state_dim,
              int measurement_dim, int horizon) {
  const auto check_target = [&](OutlierTarget target, int channel, int duration,
                                const char* what) {
    const int dim =
        target == OutlierTarget::observation ? measurement_dim : state_dim;
    if (channel < 0 || channel >= dim)
      fail(ErrorCode::config_error,
           std::string(what) + ": channel out of range");
    if (duration < 1)
      fail(ErrorCode::config_error,
           std::string(what) + ": duration must be at least 1");
  };
  for (const OutlierEvent& e : schedule.events) {
    if (e.step < 1 || e.step > horizon)
      fail(ErrorCode::config_error, "outlier event step outside the horizon");
    check_target(e.target, e.channel, e.duration, "outlier event");
  }
  for (const RandomOutliers& r : schedule.random) {
    if (!(r.fraction >= 0.0 && r.fraction <= 1.0))
      fail(ErrorCode::config_error, "outlier fraction must be in [0, 1]");
    check_target(r.target, r.channel, r.duration, "random outliers");
  }
}

std::vector<OutlierEvent> expand_schedule(const OutlierSchedule& schedule,
                                          int horizon, RngStream& stream) {
  std::vector<OutlierEvent> events = schedule.events;
  for (const RandomOutliers& r : schedule.random) {
    for (int step = 1; step <= horizon; ++step) {
      if (stream.uniform() < r.fraction)
        events.push_back({step, r.target, r.channel, r.magnitude, r.duration});
    }
  }
  return events;
}

SimulationTrace simulate_clean(const DynamicModel& model, const Vec& x0,
                               const std::vector<NoiseSpec>& process_specs,
                               const std::vector<NoiseSpec>& measurement_specs,
                               int horizon, std::uint64_t master_seed,
                               std::uint64_t replicate) {
  const int n = model.state_dim();
  const int m = model.measurement_dim();
  if (static_cast<int>(process_specs.size()) != n)
    fail(ErrorCode::dimension_mismatch, "one process noise spec per state");
  if (static_cast<int>(measurement_specs.size()) != m)
    fail(ErrorCode::dimension_mismatch, "one measurement noise spec per channel");
  if (x0.size() != n)
    fail(ErrorCode::dimension_mismatch, "initial state size mismatch");
  if (horizon < 1) fail(ErrorCode::invalid_argument, "horizon must be positive");

  std::vector<RngStream> process_streams;
  std::vector<RngStream> obs_streams;
  for (int i = 0; i < n; ++i)
    process_streams.emplace_back(
        derive_seed(master_seed, replicate, StreamRole::process, i));
  for (int j = 0; j < m; ++j)
    obs_streams.emplace_back(
        derive_seed(master_seed, replicate, StreamRole::observation, j));

  SimulationTrace trace;
  trace.states.resize(horizon + 1, n);
  trace.measurements.resize(horizon, m);
  trace.process_draws.resize(horizon, n);
  trace.measurement_draws.resize(horizon, m);

  trace.states.row(0) = x0.transpose();
  Vec x = x0;
  for (int k = 1; k <= horizon; ++k) {
    Vec w(n), v(m);
    for (int i = 0; i < n; ++i) w[i] = sample(process_specs[i], process_streams[i]);
    for (int j = 0; j < m; ++j) v[j] = sample(measurement_specs[j], obs_streams[j]);
    trace.process_draws.row(k - 1) = w.transpose();
    trace.measurement_draws.row(k - 1) = v.transpose();
    x = step_truth(model, x, w);
    trace.states.row(k) = x.transpose();
    trace.measurements.row(k - 1) = observe(model, x, v).transpose();
  }
  return trace;
}

SimulationTrace apply_outliers(const SimulationTrace& clean,
                               const OutlierSchedule& schedule,
                               const DynamicModel& model,
                               const std::vector<NoiseSpec>& process_specs,
                               const std::vector<NoiseSpec>& measurement_specs,
                               RngStream& outlier_stream) {
  const int horizon = static_cast<int>(clean.measurements.rows());
  const int n = model.state_dim();
  const int m = model.measurement_dim();
  validate(schedule, n, m, horizon);
  if (schedule.empty()) return clean;

  SimulationTrace trace = clean;
  trace.applied = expand_schedule(schedule, horizon, outlier_stream);

  // Impulses enter through the process-noise draws.
  for (const OutlierEvent& e : trace.applied) {
    if (e.target != OutlierTarget::innovation) continue;
    const double sigma = std::sqrt(nominal_variance(process_specs[e.channel]));
    for (int step = e.step; step < e.step + e.duration && step <= horizon; ++step)
      trace.process_draws(step - 1, e.channel) += e.magnitude * sigma;
  }

  // Re-integrate the trajectory on the (possibly corrupted) draws.
  Vec x = trace.states.row(0).transpose();
  for (int k = 1; k <= horizon; ++k) {
    x = step_truth(model, x, trace.process_draws.row(k - 1).transpose());
    trace.states.row(k) = x.transpose();
    trace.measurements.row(k - 1) =
        observe(model, x, trace.measurement_draws.row(k - 1).transpose())
            .transpose();
  }

  // Measurement biases go on top of the regenerated observations.
  for (const OutlierEvent& e : trace.applied) {
    if (e.target != OutlierTarget::observation) continue;
    const double sigma = std::sqrt(nominal_variance(measurement_specs[e.channel]));
    for (int step = e.step; step < e.step + e.duration && step <= horizon; ++step)
      trace.measurements(step - 1, e.channel) += e.magnitude * sigma;
  }
  return trace;
}

}  // namespace gmukf
