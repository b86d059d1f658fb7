// SPDX-License-Identifier: MIT

#include "swedge/fieller.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "swedge/numio.hpp"

namespace swedge {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

IntervalSet IntervalSet::bounded(double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("bounded interval needs lo <= hi");
  IntervalSet s;
  s.kind_ = Kind::Bounded;
  s.lo_ = lo;
  s.hi_ = hi;
  return s;
}

IntervalSet IntervalSet::two_rays(double left_hi, double right_lo) {
  if (!(left_hi < right_lo)) throw std::invalid_argument("two rays need a gap between them");
  IntervalSet s;
  s.kind_ = Kind::TwoRays;
  s.lo_ = left_hi;
  s.hi_ = right_lo;
  return s;
}

IntervalSet IntervalSet::whole_line() {
  IntervalSet s;
  s.kind_ = Kind::WholeLine;
  s.lo_ = -kInf;
  s.hi_ = kInf;
  return s;
}

IntervalSet IntervalSet::empty() {
  IntervalSet s;
  s.kind_ = Kind::Empty;
  return s;
}

IntervalSet IntervalSet::point(double x) {
  IntervalSet s;
  s.kind_ = Kind::Point;
  s.lo_ = x;
  s.hi_ = x;
  return s;
}

bool IntervalSet::contains(double x) const {
  switch (kind_) {
    case Kind::Bounded: return lo_ <= x && x <= hi_;
    case Kind::TwoRays: return x <= lo_ || x >= hi_;
    case Kind::WholeLine: return true;
    case Kind::Empty: return false;
    case Kind::Point: return x == lo_;
  }
  return false;
}

std::string IntervalSet::describe() const {
  auto num = [](double v) -> std::string {
    if (v == kInf) return "inf";
    if (v == -kInf) return "-inf";
    return format_double(v);
  };
  switch (kind_) {
    case Kind::Bounded: {
      const std::string open = lo_ == -kInf ? "(" : "[";
      const std::string close = hi_ == kInf ? ")" : "]";
      return open + num(lo_) + ", " + num(hi_) + close;
    }
    case Kind::TwoRays: return "(-inf, " + num(lo_) + "] U [" + num(hi_) + ", inf)";
    case Kind::WholeLine: return "(-inf, inf)";
    case Kind::Empty: return "(empty)";
    case Kind::Point: return "{" + num(lo_) + "}";
  }
  return "(empty)";
}

IntervalSet invert_quadratic_test(double a, double b, double q0, double q1,
                                  double q2, double crit) {
  const double c2 = crit * crit;
  // g(lambda) = A2 lambda^2 + A1 lambda + A0 <= 0 is the acceptance region.
  const double A2 = b * b - c2 * q2;
  const double A1 = 2.0 * a * b - c2 * q1;
  const double A0 = a * a - c2 * q0;

  if (A2 == 0.0) {
    if (A1 == 0.0) return A0 <= 0.0 ? IntervalSet::whole_line() : IntervalSet::empty();
    const double root = -A0 / A1;
    return A1 > 0.0 ? IntervalSet::bounded(-kInf, root) : IntervalSet::bounded(root, kInf);
  }

  const double disc = A1 * A1 - 4.0 * A2 * A0;
  if (A2 > 0.0) {
    if (disc < 0.0) return IntervalSet::empty();
    if (disc == 0.0) return IntervalSet::point(-A1 / (2.0 * A2));
  } else if (disc <= 0.0) {
    return IntervalSet::whole_line();
  }

  const double s = std::sqrt(disc);
  // Citardauq pairing avoids cancellation when A1 dominates.
  const double t = -0.5 * (A1 + std::copysign(s, A1));
  double r1;
  double r2;
  if (t != 0.0) {
    r1 = t / A2;
    r2 = A0 / t;
  } else {  // A1 == 0
    r1 = -s / (2.0 * A2);
    r2 = -r1;
  }
  if (r1 > r2) std::swap(r1, r2);
  if (A2 > 0.0) return r1 == r2 ? IntervalSet::point(r1) : IntervalSet::bounded(r1, r2);
  if (r1 == r2) return IntervalSet::whole_line();
  return IntervalSet::two_rays(r1, r2);
}

}  // namespace swedge
