#pragma once

#include "gmukf/models.hpp"
#include "gmukf/types.hpp"

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

namespace gmukf {

// Per-channel noise families. The mixture is recentred so the delivered
// draws have zero mean overall regardless of the component means.
struct GaussianNoise {
  double sigma = 1.0;
};
struct MixtureNoise {
  double weight1 = 0.5;
  double mean1 = 0.0;
  double sigma1 = 1.0;
  double mean2 = 0.0;
  double sigma2 = 1.0;
};
struct LaplaceNoise {
  double b = 1.0;
};
struct CauchyNoise {
  double gamma = 1.0;
};

using NoiseSpec = std::variant<GaussianNoise, MixtureNoise, LaplaceNoise, CauchyNoise>;

void validate(const NoiseSpec& spec);

// The variance a filter should assume for the channel. Gaussian: sigma^2;
// mixture: within- plus between-component variance; Laplace: 2 b^2; Cauchy
// has no variance, so the conventional pseudo-variance (2.2 gamma)^2 is used.
double nominal_variance(const NoiseSpec& spec);

// Diagonal nominal covariance for a channel list.
Mat nominal_covariance(const std::vector<NoiseSpec>& specs);

// Deterministic random stream over a standard mt19937_64 engine, with fixed
// draw consumption: every normal costs exactly two uniforms, so parallel
// streams stay aligned. Standard-library distributions are avoided because
// their draw patterns are implementation defined, and traces must reproduce
// byte for byte.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // open interval (0, 1)
  double normal();   // standard normal via Box-Muller

 private:
  std::mt19937_64 engine_;
};

// Stream roles; combined with channel and replicate to derive independent
// substreams from one master seed.
enum class StreamRole : std::uint64_t {
  process = 1,
  observation = 2,
  outlier = 3,
};

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replicate,
                          StreamRole role, std::uint64_t channel);

// Inverse-CDF maps used by the samplers, exposed for direct testing.
double laplace_quantile(double u, double b);
double cauchy_quantile(double u, double gamma);

double sample(const NoiseSpec& spec, RngStream& stream);

// Scheduled gross errors. Observation events add magnitude * sigma_channel
// to the measurement; innovation events add the same kind of impulse to the
// process-noise draw, corrupting the prediction path through the dynamics.
enum class OutlierTarget { observation, innovation };

struct OutlierEvent {
  int step = 1;  // first affected step, 1-based
  OutlierTarget target = OutlierTarget::observation;
  int channel = 0;
  double magnitude = 0.0;  // in multiples of the channel's nominal sigma
  int duration = 1;
};

// Random schedules pick each step independently with probability `fraction`,
// using the dedicated outlier stream so clean-noise draws are untouched.
struct RandomOutliers {
  OutlierTarget target = OutlierTarget::observation;
  int channel = 0;
  double magnitude = 0.0;
  double fraction = 0.0;
  int duration = 1;
};

struct OutlierSchedule {
  std::vector<OutlierEvent> events;
  std::vector<RandomOutliers> random;

  bool empty() const { return events.empty() && random.empty(); }
};

void validate(const OutlierSchedule& schedule, int state_dim,
              int measurement_dim, int horizon);

// Expands the schedule to concrete per-step events within the horizon.
std::vector<OutlierEvent> expand_schedule(const OutlierSchedule& schedule,
                                          int horizon, RngStream& stream);

// Ground-truth simulation of one replicate. Row k-1 of measurements is z_k;
// states has horizon+1 rows with the initial state first. The raw noise
// draws are kept so outlier injection can be replayed on the same randomness.
struct SimulationTrace {
  Mat states;             // (horizon + 1) x n
  Mat measurements;       // horizon x m
  Mat process_draws;      // horizon x n
  Mat measurement_draws;  // horizon x m
  std::vector<OutlierEvent> applied;  // expanded events, empty for clean runs
};

SimulationTrace simulate_clean(const DynamicModel& model, const Vec& x0,
                               const std::vector<NoiseSpec>& process_specs,
                               const std::vector<NoiseSpec>& measurement_specs,
                               int horizon, std::uint64_t master_seed,
                               std::uint64_t replicate);

// Injects the schedule into a clean trace: impulses are added to the stored
// process draws, the trajectory is re-integrated, and measurement biases are
// added on top of the stored measurement noise. An empty schedule returns the
// clean trace unchanged.
SimulationTrace apply_outliers(const SimulationTrace& clean,
                               const OutlierSchedule& schedule,
                               const DynamicModel& model,
                               const std::vector<NoiseSpec>& process_specs,
                               const std::vector<NoiseSpec>& measurement_specs,
                               RngStream& outlier_stream);

}  // namespace gmukf
