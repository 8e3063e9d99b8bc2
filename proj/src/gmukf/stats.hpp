#pragma once

#include <vector>

namespace gmukf {

double normal_pdf(double x);
double normal_cdf(double x);

// Median with the even-count convention: midpoint of the two central order
// statistics. The input is copied and may be in any order.
double median(std::vector<double> values);

// Quantile of the chi-square distribution with even df, via bisection on the
// closed-form CDF 1 - exp(-x/2) * sum_{j<df/2} (x/2)^j / j!.
double chi_square_quantile(int df, double p);

}  // namespace gmukf
