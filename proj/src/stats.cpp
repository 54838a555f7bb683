#include "fnd/stats.hpp"

#include <cmath>
#include <limits>

#include "fnd/error.hpp"

namespace fnd {

namespace {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw UsageError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw UsageError("student t needs df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

double mean(std::span<const double> xs) {
  double s = 0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double population_stddev(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double m = mean(xs);
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

TTestResult welch_t_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2) throw UsageError("welch_t_test needs >= 2 values per sample");
  const auto nx = static_cast<double>(xs.size());
  const auto ny = static_cast<double>(ys.size());
  const double mx = mean(xs), my = mean(ys);
  double vx = 0, vy = 0;
  for (double x : xs) vx += (x - mx) * (x - mx);
  for (double y : ys) vy += (y - my) * (y - my);
  vx /= nx - 1.0;
  vy /= ny - 1.0;

  const double sx = vx / nx, sy = vy / ny;
  const double se2 = sx + sy;
  TTestResult r;
  if (se2 == 0.0) {
    r.df = nx + ny - 2.0;
    if (mx == my) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mx > my ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (mx - my) / std::sqrt(se2);
  r.df = se2 * se2 / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
  r.p = regularized_incomplete_beta(0.5 * r.df, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

}  // namespace fnd
