// SPDX-License-Identifier: MIT
// Exact rational arithmetic for design probabilities and enumeration counts.

#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace swedge {

// Small exact rational over int64 with gcd normalization. All operations
// check for overflow and throw; the quantities handled here (assignment
// probabilities, enumeration frequencies) stay far below the limits for
// every design this library accepts.
class Rational {
 public:
  constexpr Rational() : num_(0), den_(1) {}
  // NOLINTNEXTLINE(google-explicit-constructor): integers are rationals
  constexpr Rational(std::int64_t n) : num_(n), den_(1) {}
  Rational(std::int64_t n, std::int64_t d) : num_(n), den_(d) { normalize(); }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  std::string str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
  }

  friend Rational operator+(const Rational& a, const Rational& b) {
    const std::int64_t g = std::gcd(a.den_, b.den_);
    const std::int64_t bd = b.den_ / g;
    // a.num*(b.den/g) + b.num*(a.den/g), over lcm denominator
    const std::int64_t lhs = mul_checked(a.num_, bd);
    const std::int64_t rhs = mul_checked(b.num_, a.den_ / g);
    return Rational(add_checked(lhs, rhs), mul_checked(a.den_, bd));
  }
  friend Rational operator-(const Rational& a, const Rational& b) { return a + (-b); }
  friend Rational operator*(const Rational& a, const Rational& b) {
    // Cross-reduce before multiplying to keep intermediates small.
    const std::int64_t g1 = std::gcd(std::abs(a.num_), b.den_);
    const std::int64_t g2 = std::gcd(std::abs(b.num_), a.den_);
    return Rational(mul_checked(a.num_ / g1, b.num_ / g2),
                    mul_checked(a.den_ / g2, b.den_ / g1));
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw std::domain_error("rational division by zero");
    return a * Rational(b.den_, b.num_);
  }
  Rational operator-() const {
    Rational r;
    r.num_ = -num_;
    r.den_ = den_;
    return r;
  }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }
  Rational& operator*=(const Rational& o) { return *this = *this * o; }
  Rational& operator/=(const Rational& o) { return *this = *this / o; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }
  friend bool operator<(const Rational& a, const Rational& b) {
    // Exact comparison via cross multiplication (checked).
    return mul_checked(a.num_, b.den_) < mul_checked(b.num_, a.den_);
  }
  friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
  friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }
  friend bool operator>=(const Rational& a, const Rational& b) { return !(a < b); }

 private:
  static std::int64_t add_checked(std::int64_t a, std::int64_t b) {
    std::int64_t r = 0;
    if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("rational overflow in +");
    return r;
  }
  static std::int64_t mul_checked(std::int64_t a, std::int64_t b) {
    std::int64_t r = 0;
    if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("rational overflow in *");
    return r;
  }

  void normalize() {
    if (den_ == 0) throw std::domain_error("rational with zero denominator");
    if (den_ < 0) {
      num_ = -num_;
      den_ = -den_;
    }
    const std::int64_t g = std::gcd(std::abs(num_), den_);
    if (g > 1) {
      num_ /= g;
      den_ /= g;
    }
    if (num_ == 0) den_ = 1;
  }

  std::int64_t num_;
  std::int64_t den_;
};

}  // namespace swedge
