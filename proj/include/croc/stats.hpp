#pragma once

#include <cstddef>
#include <vector>

namespace croc {

/// Regularized incomplete beta function I_x(a, b), continued-fraction form.
double incomplete_beta(double a, double b, double x);

/// CDF of Student's t with nu degrees of freedom.
double student_t_cdf(double t, double nu);

struct PairedTTest {
  double t = 0.0;
  double p_one_sided = 1.0;  // H1: mean(a - b) > 0
  double p_two_sided = 1.0;
  double mean_diff = 0.0;
};

/// Paired t-test on equal-length samples. Degenerate inputs (n < 2 or zero
/// variance with zero mean) report p = 1.
PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Two-sided Mann-Whitney U p-value, normal approximation with tie
/// correction. Suitable for n >= ~8 per side.
double mann_whitney_p(const std::vector<double>& x, const std::vector<double>& y);

/// Percentile with linear interpolation, pct in [0, 100].
double percentile(std::vector<double> v, double pct);

double mean(const std::vector<double>& v);
double stddev(const std::vector<double>& v);  // sample (n-1); 0 for n < 2

}  // namespace croc
