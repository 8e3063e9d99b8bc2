#include "gmukf/stats.hpp"

#include "gmukf/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gmukf {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

// Survival function of chi-square with even df: exp(-x/2) * sum (x/2)^j / j!.
double chi_square_sf_even(int df, double x) {
  const int k = df / 2;
  const double half = 0.5 * x;
  double term = 1.0;
  double sum = 1.0;
  for (int j = 1; j < k; ++j) {
    term *= half / j;
    sum += term;
  }
  return std::exp(-half) * sum;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double median(std::vector<double> values) {
  if (values.empty())
    fail(ErrorCode::invalid_argument, "median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double chi_square_quantile(int df, double p) {
  if (df < 2 || df % 2 != 0)
    fail(ErrorCode::invalid_argument,
         "chi_square_quantile supports even df >= 2, got " + std::to_string(df));
  if (!(p > 0.0 && p < 1.0))
    fail(ErrorCode::invalid_argument, "chi_square_quantile requires p in (0, 1)");

  double lo = 0.0;
  double hi = static_cast<double>(df);
  while (chi_square_sf_even(df, hi) > 1.0 - p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (chi_square_sf_even(df, mid) > 1.0 - p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace gmukf
