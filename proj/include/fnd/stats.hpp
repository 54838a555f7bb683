#pragma once

#include <span>

namespace fnd {

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

/// CDF of Student's t distribution with df degrees of freedom (df > 0).
double student_t_cdf(double t, double df);

struct TTestResult {
  double t = 0;
  double df = 0;
  double p = 1;  // two-sided
};

/// Welch's unequal-variance two-sample t-test. Both samples need >= 2 values.
TTestResult welch_t_test(std::span<const double> xs, std::span<const double> ys);

double mean(std::span<const double> xs);
/// Population standard deviation.
double population_stddev(std::span<const double> xs);

}  // namespace fnd
