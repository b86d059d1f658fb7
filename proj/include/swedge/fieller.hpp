// SPDX-License-Identifier: MIT
// Test inversion for ratio estimands. The acceptance region of the deviate
// test, tau(lambda)^2 <= crit^2 * S(lambda)^2, is the sublevel set of a
// quadratic in lambda, so the confidence set is one of five shapes:
// a bounded interval, two rays, the whole line, empty, or a single point.

#pragma once

#include <string>

namespace swedge {

class IntervalSet {
 public:
  enum class Kind { Bounded, TwoRays, WholeLine, Empty, Point };

  static IntervalSet bounded(double lo, double hi);
  // (-inf, left_hi] union [right_lo, +inf) with left_hi < right_lo.
  static IntervalSet two_rays(double left_hi, double right_lo);
  static IntervalSet whole_line();
  static IntervalSet empty();
  static IntervalSet point(double x);

  Kind kind() const { return kind_; }
  // Bounded: endpoints (either may be infinite in the degenerate linear
  // case). TwoRays: lo() is the upper end of the left ray, hi() the lower
  // end of the right ray. Point: lo() == hi() == x.
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  bool contains(double x) const;
  // e.g. "[0.1, 2.3]", "(-inf, 0.1] U [2.3, inf)", "(-inf, inf)",
  // "(empty)", "{0.5}".
  std::string describe() const;

  bool operator==(const IntervalSet&) const = default;

 private:
  Kind kind_ = Kind::Empty;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

// Solution set of (a + b*lambda)^2 <= crit^2 * (q0 + q1*lambda + q2*lambda^2)
// where a + b*lambda is the point estimate and q0 + q1*lambda + q2*lambda^2
// its variance. Classification is exact in the computed coefficients
// (b^2 - crit^2 q2 and the discriminant decide the shape); roots use the
// numerically stable quadratic formula. A degenerate linear boundary yields
// a half line, represented as Bounded with one infinite endpoint.
IntervalSet invert_quadratic_test(double a, double b, double q0, double q1,
                                  double q2, double crit);

}  // namespace swedge
