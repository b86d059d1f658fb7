// SPDX-License-Identifier: MIT

#include "swedge/distributions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace swedge {

namespace {

// Continued-fraction evaluation for the incomplete beta (modified Lentz).
// Converges quickly when x < (a + 1) / (a + b + 2); the caller arranges that.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
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
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  return h;  // converged to machine precision for all df/x used here
}

// Generic monotone bisection for an increasing CDF. The bracket is grown by
// doubling first, then halved until it is narrower than xtol.
template <typename Cdf>
double bisect_quantile(double p, Cdf cdf, double xtol) {
  if (!(p > 0.0) || !(p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("quantile requires probability in [0, 1]");
  }
  double lo = -1.0;
  double hi = 1.0;
  while (cdf(lo) > p) lo *= 2.0;
  while (cdf(hi) < p) hi *= 2.0;
  while (hi - lo > xtol) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;  // at floating-point resolution
    if (cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

constexpr double kQuantileTol = 1e-12;

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("incomplete_beta requires a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730950488016887242097); }

double normal_quantile(double p) {
  return bisect_quantile(p, [](double x) { return normal_cdf(x); }, kQuantileTol);
}

double student_t_cdf(double x, double df) {
  if (!(df > 0.0)) throw std::domain_error("student_t_cdf requires df > 0");
  if (x == 0.0) return 0.5;
  const double w = df / (df + x * x);
  const double half_tail = 0.5 * incomplete_beta(0.5 * df, 0.5, w);
  return x > 0.0 ? 1.0 - half_tail : half_tail;
}

double student_t_quantile(double p, double df) {
  return bisect_quantile(p, [df](double x) { return student_t_cdf(x, df); }, kQuantileTol);
}

double two_sided_p_normal(double deviate) {
  return 2.0 * normal_cdf(-std::fabs(deviate));
}

double two_sided_p_student_t(double deviate, double df) {
  return 2.0 * student_t_cdf(-std::fabs(deviate), df);
}

}  // namespace swedge
