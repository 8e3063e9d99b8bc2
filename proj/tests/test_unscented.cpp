#include "doctest.h"
#include "gmukf/models.hpp"
#include "gmukf/unscented.hpp"
#include "oracles/oracles.hpp"

#include <cmath>
#include <random>

using namespace gmukf;

namespace {

Mat random_spd(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d;
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = d(rng);
  return scale * (a * a.transpose()) + 1e-3 * scale * Mat::Identity(n, n);
}

Vec random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d;
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * d(rng);
  return v;
}

}  // namespace

TEST_CASE("sigma points reproduce the first two moments exactly") {
  std::mt19937_64 rng(11);
  for (int n : {1, 2, 4, 7}) {
    const GaussianBelief belief{random_vec(n, rng), random_spd(n, rng)};
    const SigmaPointSet pts = generate_sigma_points(belief);

    REQUIRE(static_cast<int>(pts.points.size()) == 2 * n);
    REQUIRE(pts.weights.size() == 2 * n);
    for (int i = 0; i < 2 * n; ++i)
      CHECK(pts.weights(i) == doctest::Approx(1.0 / (2 * n)).epsilon(1e-15));

    // Plus/minus pairs straddle the mean symmetrically.
    for (int i = 0; i < n; ++i)
      CHECK((0.5 * (pts.points[i] + pts.points[n + i]) - belief.mean)
                .lpNorm<Eigen::Infinity>() <= 1e-12);

    Vec mean = Vec::Zero(n);
    for (int i = 0; i < 2 * n; ++i) mean += pts.weights(i) * pts.points[i];
    CHECK((mean - belief.mean).lpNorm<Eigen::Infinity>() <= 1e-12);

    Mat scatter = Mat::Zero(n, n);
    for (int i = 0; i < 2 * n; ++i) {
      const Vec d = pts.points[i] - belief.mean;
      scatter += pts.weights(i) * d * d.transpose();
    }
    CHECK((scatter - belief.cov).lpNorm<Eigen::Infinity>() <=
          1e-10 * belief.cov.norm());
  }
}

TEST_CASE("unscented transform of the identity returns the belief") {
  std::mt19937_64 rng(12);
  const int n = 3;
  const GaussianBelief belief{random_vec(n, rng), random_spd(n, rng)};
  const SigmaPointSet pts = generate_sigma_points(belief);
  const UnscentedMoments mom =
      unscented_transform(pts, [](const Vec& x) { return x; });
  CHECK((mom.mean - belief.mean).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((mom.cov - belief.cov).lpNorm<Eigen::Infinity>() <=
        1e-10 * belief.cov.norm());
  CHECK((mom.cross_cov - belief.cov).lpNorm<Eigen::Infinity>() <=
        1e-10 * belief.cov.norm());
}

TEST_CASE("unscented transform is exact for affine maps") {
  std::mt19937_64 rng(13);
  const int n = 3, m = 2;
  const GaussianBelief belief{random_vec(n, rng), random_spd(n, rng)};
  Mat A(m, n);
  for (int i = 0; i < m; ++i) A.row(i) = random_vec(n, rng).transpose();
  const Vec b = random_vec(m, rng);
  const Mat R = random_spd(m, rng, 0.1);

  const SigmaPointSet pts = generate_sigma_points(belief);
  const UnscentedMoments mom = unscented_transform(
      pts, [&](const Vec& x) { return Vec(A * x + b); }, R);

  const double tol = 1e-10 * (1.0 + belief.cov.norm());
  CHECK((mom.mean - (A * belief.mean + b)).lpNorm<Eigen::Infinity>() <= tol);
  CHECK((mom.cov - (A * belief.cov * A.transpose() + R))
            .lpNorm<Eigen::Infinity>() <= tol);
  CHECK((mom.cross_cov - belief.cov * A.transpose()).lpNorm<Eigen::Infinity>() <=
        tol);
}

TEST_CASE("statistical linearization recovers affine maps exactly") {
  std::mt19937_64 rng(14);
  const int n = 4;
  const GaussianBelief belief{random_vec(n, rng), random_spd(n, rng)};
  Mat A(n, n);
  for (int i = 0; i < n; ++i) A.row(i) = random_vec(n, rng).transpose();
  const Vec b = random_vec(n, rng);

  const SigmaPointSet pts = generate_sigma_points(belief);
  const StatisticalLinearization lin =
      statistical_linearize(pts, [&](const Vec& x) { return Vec(A * x + b); });
  CHECK((lin.A - A).lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK((lin.b - b).lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK(lin.error_cov.lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("statistical linearization matches a direct least-squares fit") {
  std::mt19937_64 rng(15);
  const auto g = [](const Vec& x) {
    Vec y(2);
    y(0) = std::sin(x(0)) + 0.3 * x(1) * x(1);
    y(1) = x(0) * x(1);
    return y;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const GaussianBelief belief{random_vec(2, rng), random_spd(2, rng, 0.3)};
    const SigmaPointSet pts = generate_sigma_points(belief);
    const StatisticalLinearization lin = statistical_linearize(pts, g);

    std::vector<Vec> xs(pts.points.begin(), pts.points.end());
    std::vector<Vec> ys;
    for (const Vec& x : pts.points) ys.push_back(g(x));
    const oracle::AffineFit fit = oracle::affine_fit(xs, pts.weights, ys);

    CHECK((lin.A - fit.A).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK((lin.b - fit.b).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK((lin.error_cov - fit.residual_cov).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("a zero covariance is rescued by jitter, a negative one is not") {
  const GaussianBelief flat{Vec::Zero(2), Mat::Zero(2, 2)};
  const SigmaPointSet pts = generate_sigma_points(flat);
  for (const Vec& p : pts.points) {
    CHECK(p.allFinite());
    CHECK(p.lpNorm<Eigen::Infinity>() <= 1e-2);
  }

  const GaussianBelief bogus{Vec::Zero(2), -Mat::Identity(2, 2)};
  CHECK_THROWS_AS(generate_sigma_points(bogus), Error);
  try {
    generate_sigma_points(bogus);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::singular_covariance);
  }
}

TEST_CASE("prediction on a linear model matches the closed form") {
  std::mt19937_64 rng(16);
  Mat A(2, 2), C(2, 2);
  A << 0.95, 0.08, -0.1, 0.9;
  C << 1.0, 0.0, 0.3, 1.0;
  const Mat Q = random_spd(2, rng, 1e-3);
  const Mat R = random_spd(2, rng, 1e-2);
  const LinearModel model(A, C, Q, R);
  const GaussianBelief belief{random_vec(2, rng), random_spd(2, rng)};

  const GaussianBelief pred = ukf_predict(belief, model);
  CHECK((pred.mean - A * belief.mean).lpNorm<Eigen::Infinity>() <= 1e-11);
  CHECK((pred.cov - (A * belief.cov * A.transpose() + Q))
            .lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("filter step on a linear model reproduces the Kalman filter") {
  std::mt19937_64 rng(17);
  Mat A(2, 2), C(2, 2);
  A << 0.95, 0.08, -0.1, 0.9;
  C << 1.0, 0.0, 0.3, 1.0;
  const Mat Q = random_spd(2, rng, 1e-3);
  const Mat R = random_spd(2, rng, 1e-2);
  const LinearModel model(A, C, Q, R);

  GaussianBelief belief{random_vec(2, rng), random_spd(2, rng)};
  oracle::KalmanBelief reference{belief.mean, belief.cov};
  for (int k = 0; k < 50; ++k) {
    const Vec z = random_vec(2, rng);
    belief = ukf_update(ukf_predict(belief, model), model, z);
    reference = oracle::kalman_step(reference, A, C, Q, R, z);
    CHECK((belief.mean - reference.mean).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK((belief.cov - reference.cov).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("posterior covariance never exceeds the predicted covariance") {
  std::mt19937_64 rng(18);
  Mat Q = Mat::Identity(2, 2) * 1e-5;
  Mat R = Mat::Identity(2, 2) * 1e-3;
  const SwingModel model(SwingParams{}, Q, R);
  GaussianBelief belief{model.equilibrium(), Mat::Identity(2, 2) * 1e-2};
  for (int k = 0; k < 20; ++k) {
    const GaussianBelief pred = ukf_predict(belief, model);
    const Vec z = model.h(pred.mean) + random_vec(2, rng, 0.02);
    belief = ukf_update(pred, model, z);
    const Eigen::SelfAdjointEigenSolver<Mat> es(pred.cov - belief.cov);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("measurement update rejects mis-sized measurements") {
  const SwingModel model(SwingParams{}, Mat::Identity(2, 2) * 1e-5,
                         Mat::Identity(2, 2) * 1e-3);
  const GaussianBelief belief{model.equilibrium(), Mat::Identity(2, 2) * 1e-2};
  const GaussianBelief pred = ukf_predict(belief, model);
  CHECK_THROWS_AS(ukf_update(pred, model, Vec::Zero(3)), Error);
}
