#include "doctest.h"
#include "gmukf/models.hpp"
#include "gmukf/noise.hpp"

#include <cmath>
#include <memory>
#include <set>

using namespace gmukf;

TEST_CASE("nominal variances follow the family formulas") {
  CHECK(nominal_variance(GaussianNoise{0.3}) ==
        doctest::Approx(0.09).epsilon(1e-15));
  CHECK(nominal_variance(LaplaceNoise{0.5}) ==
        doctest::Approx(2.0 * 0.25).epsilon(1e-15));
  CHECK(nominal_variance(CauchyNoise{0.1}) ==
        doctest::Approx(0.22 * 0.22).epsilon(1e-12));

  // Mixture: within-component plus between-component variance.
  MixtureNoise mix;
  mix.weight1 = 0.9;
  mix.mean1 = 0.0;
  mix.sigma1 = 1.0;
  mix.mean2 = 10.0;
  mix.sigma2 = 3.0;
  const double mean = 0.9 * 0.0 + 0.1 * 10.0;
  const double expected = 0.9 * (1.0 + (0.0 - mean) * (0.0 - mean)) +
                          0.1 * (9.0 + (10.0 - mean) * (10.0 - mean));
  CHECK(nominal_variance(mix) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("nominal covariance is diagonal in the spec order") {
  const std::vector<NoiseSpec> specs = {GaussianNoise{0.2}, LaplaceNoise{0.1},
                                        CauchyNoise{0.05}};
  const Mat R = nominal_covariance(specs);
  REQUIRE(R.rows() == 3);
  CHECK(R(0, 0) == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(R(1, 1) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(R(2, 2) == doctest::Approx(0.0121).epsilon(1e-12));
  CHECK(R(0, 1) == 0.0);
  CHECK(R(2, 0) == 0.0);
}

TEST_CASE("spec validation rejects non-positive spreads") {
  CHECK_NOTHROW(validate(NoiseSpec{GaussianNoise{1.0}}));
  CHECK_THROWS_AS(validate(NoiseSpec{GaussianNoise{0.0}}), Error);
  CHECK_THROWS_AS(validate(NoiseSpec{LaplaceNoise{-1.0}}), Error);
  CHECK_THROWS_AS(validate(NoiseSpec{CauchyNoise{0.0}}), Error);
  MixtureNoise mix;
  mix.weight1 = 1.0;
  CHECK_THROWS_AS(validate(NoiseSpec{mix}), Error);
}

TEST_CASE("quantile maps hit their closed forms") {
  CHECK(laplace_quantile(0.5, 2.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(laplace_quantile(0.25, 1.0) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(laplace_quantile(0.75, 1.0) ==
        doctest::Approx(-std::log(0.5)).epsilon(1e-12));
  CHECK(laplace_quantile(0.9, 2.0) ==
        doctest::Approx(-2.0 * std::log(0.2)).epsilon(1e-12));

  CHECK(cauchy_quantile(0.5, 3.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cauchy_quantile(0.75, 3.0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(cauchy_quantile(0.25, 3.0) == doctest::Approx(-3.0).epsilon(1e-12));
}

TEST_CASE("random streams are reproducible and uniforms lie in (0,1)") {
  RngStream a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
    CHECK(ua > 0.0);
    CHECK(ua < 1.0);
    all_equal = all_equal && (ua == ub);
    any_diff = any_diff || (ua != uc);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("every normal draw consumes exactly two uniforms") {
  RngStream a(42), b(42);
  for (int i = 0; i < 10; ++i) a.normal();
  for (int i = 0; i < 20; ++i) b.uniform();
  // Both engines sit at the same position now.
  for (int i = 0; i < 5; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("seed derivation is deterministic and collision-free in use") {
  CHECK(derive_seed(1, 2, StreamRole::process, 3) ==
        derive_seed(1, 2, StreamRole::process, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t master : {1ull, 99ull})
    for (std::uint64_t rep = 0; rep < 20; ++rep)
      for (StreamRole role :
           {StreamRole::process, StreamRole::observation, StreamRole::outlier})
        for (std::uint64_t ch = 0; ch < 8; ++ch)
          seen.insert(derive_seed(master, rep, role, ch));
  CHECK(seen.size() == 2u * 20u * 3u * 8u);
}

TEST_CASE("sampled moments match each family") {
  const int N = 200000;

  RngStream g(1001);
  double sum = 0, sq = 0;
  for (int i = 0; i < N; ++i) {
    const double x = sample(GaussianNoise{2.0}, g);
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / N) < 0.05);
  CHECK(sq / N == doctest::Approx(4.0).epsilon(0.05));

  RngStream l(1002);
  sum = 0, sq = 0;
  for (int i = 0; i < N; ++i) {
    const double x = sample(LaplaceNoise{0.5}, l);
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / N) < 0.05);
  CHECK(sq / N == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("the mixture is recentred and picks components at the right rate") {
  MixtureNoise mix;
  mix.weight1 = 0.8;
  mix.mean1 = 0.0;
  mix.sigma1 = 0.5;
  mix.mean2 = 12.0;
  mix.sigma2 = 0.5;
  const int N = 100000;
  RngStream stream(1003);
  double sum = 0;
  int high = 0;
  for (int i = 0; i < N; ++i) {
    const double x = sample(mix, stream);
    sum += x;
    if (x > 3.0) ++high;  // shifted component sits around 12 - E = 9.6
  }
  CHECK(std::abs(sum / N) < 0.08);
  // Binomial(1e5, 0.2): five sigma is about 0.0063.
  CHECK(static_cast<double>(high) / N == doctest::Approx(0.2).epsilon(0.04));
}

TEST_CASE("cauchy draws are symmetric with the configured half-width") {
  const int N = 100001;
  RngStream stream(1004);
  std::vector<double> draws(N);
  for (double& x : draws) x = sample(CauchyNoise{2.0}, stream);
  std::sort(draws.begin(), draws.end());
  CHECK(std::abs(draws[N / 2]) < 0.1);
  // Quartiles of a centred Cauchy sit at +-gamma.
  CHECK(draws[N / 4] == doctest::Approx(-2.0).epsilon(0.05));
  CHECK(draws[3 * N / 4] == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("schedule validation enforces channel and step ranges") {
  OutlierSchedule schedule;
  schedule.events.push_back({5, OutlierTarget::observation, 1, 10.0, 1});
  CHECK_NOTHROW(validate(schedule, 2, 2, 10));
  CHECK_THROWS_AS(validate(schedule, 2, 1, 10), Error);  // channel 1 of 1
  schedule.events[0].step = 11;
  CHECK_THROWS_AS(validate(schedule, 2, 2, 10), Error);
  schedule.events[0].step = 5;
  schedule.events[0].target = OutlierTarget::innovation;
  CHECK_THROWS_AS(validate(schedule, 1, 2, 10), Error);  // state channel 1 of 1

  OutlierSchedule random_bad;
  random_bad.random.push_back({OutlierTarget::observation, 0, 5.0, 1.5, 1});
  CHECK_THROWS_AS(validate(random_bad, 2, 2, 10), Error);
}

TEST_CASE("random schedules expand to Bernoulli step picks") {
  OutlierSchedule none;
  none.random.push_back({OutlierTarget::observation, 0, 5.0, 0.0, 1});
  RngStream s1(77);
  CHECK(expand_schedule(none, 50, s1).empty());

  OutlierSchedule all;
  all.random.push_back({OutlierTarget::observation, 1, 5.0, 1.0, 2});
  RngStream s2(77);
  const auto events = expand_schedule(all, 50, s2);
  REQUIRE(events.size() == 50);
  for (int k = 0; k < 50; ++k) {
    CHECK(events[k].step == k + 1);
    CHECK(events[k].channel == 1);
    CHECK(events[k].duration == 2);
  }

  // Explicit events ride along unchanged.
  OutlierSchedule mixed;
  mixed.events.push_back({7, OutlierTarget::innovation, 0, 3.0, 4});
  RngStream s3(77);
  const auto only_event = expand_schedule(mixed, 50, s3);
  REQUIRE(only_event.size() == 1);
  CHECK(only_event[0].step == 7);
  CHECK(only_event[0].magnitude == 3.0);
}

TEST_CASE("clean simulation obeys its own bookkeeping identities") {
  auto model = std::make_shared<SwingModel>(SwingParams{},
                                            Mat::Identity(2, 2) * 1e-6,
                                            Mat::Identity(2, 2) * 1e-4);
  const std::vector<NoiseSpec> ps = {GaussianNoise{1e-3}, GaussianNoise{1e-3}};
  const std::vector<NoiseSpec> ms = {GaussianNoise{1e-2}, GaussianNoise{1e-2}};
  const Vec x0 = model->equilibrium();

  const SimulationTrace trace = simulate_clean(*model, x0, ps, ms, 40, 99, 0);
  REQUIRE(trace.states.rows() == 41);
  REQUIRE(trace.measurements.rows() == 40);
  CHECK((trace.states.row(0).transpose() - x0).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(trace.applied.empty());

  for (int k = 0; k < 40; ++k) {
    const Vec prev = trace.states.row(k).transpose();
    const Vec expect_state =
        model->f(prev) + trace.process_draws.row(k).transpose();
    CHECK((trace.states.row(k + 1).transpose() - expect_state)
              .lpNorm<Eigen::Infinity>() <= 1e-14);
    const Vec expect_z = model->h(trace.states.row(k + 1).transpose()) +
                         trace.measurement_draws.row(k).transpose();
    CHECK((trace.measurements.row(k).transpose() - expect_z)
              .lpNorm<Eigen::Infinity>() <= 1e-14);
  }

  // Byte-for-byte reproducibility from equal seeds; new draws otherwise.
  const SimulationTrace again = simulate_clean(*model, x0, ps, ms, 40, 99, 0);
  CHECK(trace.states.cwiseEqual(again.states).all());
  CHECK(trace.measurements.cwiseEqual(again.measurements).all());
  const SimulationTrace other = simulate_clean(*model, x0, ps, ms, 40, 99, 1);
  CHECK(!trace.measurements.cwiseEqual(other.measurements).all());
}

TEST_CASE("observation outliers shift exactly the scheduled cells") {
  auto model = std::make_shared<SwingModel>(SwingParams{},
                                            Mat::Identity(2, 2) * 1e-6,
                                            Mat::Identity(2, 2) * 1e-4);
  const std::vector<NoiseSpec> ps = {GaussianNoise{1e-3}, GaussianNoise{1e-3}};
  const std::vector<NoiseSpec> ms = {GaussianNoise{0.02}, GaussianNoise{0.002}};
  const SimulationTrace clean =
      simulate_clean(*model, model->equilibrium(), ps, ms, 30, 5, 0);

  OutlierSchedule schedule;
  schedule.events.push_back({10, OutlierTarget::observation, 0, 20.0, 2});
  RngStream stream(1);
  const SimulationTrace dirty =
      apply_outliers(clean, schedule, *model, ps, ms, stream);

  CHECK(dirty.states.cwiseEqual(clean.states).all());
  CHECK(dirty.measurement_draws.cwiseEqual(clean.measurement_draws).all());
  REQUIRE(dirty.applied.size() == 1);

  const Mat delta = dirty.measurements - clean.measurements;
  for (int k = 0; k < 30; ++k)
    for (int c = 0; c < 2; ++c) {
      const bool hit = (c == 0) && (k + 1 == 10 || k + 1 == 11);
      if (hit)
        CHECK(delta(k, c) == doctest::Approx(20.0 * 0.02).epsilon(1e-12));
      else
        CHECK(delta(k, c) == 0.0);
    }
}

TEST_CASE("innovation outliers corrupt the trajectory from the hit onward") {
  auto model = std::make_shared<SwingModel>(SwingParams{},
                                            Mat::Identity(2, 2) * 1e-6,
                                            Mat::Identity(2, 2) * 1e-4);
  const std::vector<NoiseSpec> ps = {GaussianNoise{1e-3}, GaussianNoise{2e-3}};
  const std::vector<NoiseSpec> ms = {GaussianNoise{0.01}, GaussianNoise{0.01}};
  const SimulationTrace clean =
      simulate_clean(*model, model->equilibrium(), ps, ms, 30, 6, 0);

  OutlierSchedule schedule;
  schedule.events.push_back({12, OutlierTarget::innovation, 1, 20.0, 1});
  RngStream stream(1);
  const SimulationTrace dirty =
      apply_outliers(clean, schedule, *model, ps, ms, stream);

  // The impulse lands on the speed draw of step 12 only.
  const Mat draw_delta = dirty.process_draws - clean.process_draws;
  for (int k = 0; k < 30; ++k)
    for (int c = 0; c < 2; ++c) {
      if (k == 11 && c == 1)
        CHECK(draw_delta(k, c) == doctest::Approx(20.0 * 2e-3).epsilon(1e-12));
      else
        CHECK(draw_delta(k, c) == 0.0);
    }

  // States are untouched before the hit and displaced after it.
  for (int k = 0; k <= 11; ++k)
    CHECK((dirty.states.row(k) - clean.states.row(k)).lpNorm<Eigen::Infinity>() ==
          0.0);
  CHECK((dirty.states.row(12) - clean.states.row(12)).lpNorm<Eigen::Infinity>() >
        0.01);

  // The measurement noise stream is untouched: paired comparisons stay paired.
  CHECK(dirty.measurement_draws.cwiseEqual(clean.measurement_draws).all());

  // An empty schedule hands the clean trace back unchanged.
  RngStream stream2(1);
  const SimulationTrace same =
      apply_outliers(clean, OutlierSchedule{}, *model, ps, ms, stream2);
  CHECK(same.states.cwiseEqual(clean.states).all());
  CHECK(same.measurements.cwiseEqual(clean.measurements).all());
}
