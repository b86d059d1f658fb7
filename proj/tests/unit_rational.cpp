// SPDX-License-Identifier: MIT

#include "swedge/rational.hpp"

#include <doctest.h>

#include <cstdint>
#include <stdexcept>

using swedge::Rational;

TEST_CASE("rational normalizes on construction") {
  CHECK(Rational(2, 4) == Rational(1, 2));
  CHECK(Rational(-2, 4) == Rational(-1, 2));
  CHECK(Rational(2, -4) == Rational(-1, 2));
  CHECK(Rational(-2, -4) == Rational(1, 2));
  CHECK(Rational(0, 7) == Rational(0));
  CHECK(Rational(0, 7).den() == 1);
  CHECK(Rational(6).den() == 1);
  CHECK_THROWS_AS(Rational(1, 0), std::domain_error);
}

TEST_CASE("rational arithmetic is exact") {
  const Rational half(1, 2);
  const Rational third(1, 3);
  CHECK(half + third == Rational(5, 6));
  CHECK(half - third == Rational(1, 6));
  CHECK(half * third == Rational(1, 6));
  CHECK(half / third == Rational(3, 2));
  CHECK(-half == Rational(-1, 2));

  Rational acc;
  for (int i = 0; i < 10; ++i) acc += Rational(1, 10);
  CHECK(acc == Rational(1));

  // A float-hostile identity: 1/3 summed three times.
  CHECK(third + third + third == Rational(1));

  CHECK_THROWS_AS(half / Rational(0), std::domain_error);
}

TEST_CASE("rational comparisons cross-multiply exactly") {
  CHECK(Rational(1, 3) < Rational(1, 2));
  CHECK(Rational(-1, 2) < Rational(-1, 3));
  CHECK(Rational(2, 6) <= Rational(1, 3));
  CHECK(Rational(2, 6) >= Rational(1, 3));
  CHECK(Rational(7, 8) > Rational(6, 7));
}

TEST_CASE("rational string and double views") {
  CHECK(Rational(1, 11).str() == "1/11");
  CHECK(Rational(4).str() == "4");
  CHECK(Rational(-3, 9).str() == "-1/3");
  CHECK(Rational(1, 2).to_double() == 0.5);
  CHECK(Rational(1, 4).to_double() == 0.25);
}

TEST_CASE("rational arithmetic reports overflow instead of wrapping") {
  const std::int64_t big = INT64_MAX / 2 + 1;
  CHECK_THROWS_AS(Rational(big) + Rational(big), std::overflow_error);
  CHECK_THROWS_AS(Rational(big) * Rational(3), std::overflow_error);
  // Cross-reduction keeps representable products representable.
  CHECK(Rational(big, 3) * Rational(3, big) == Rational(1));
}
