// SPDX-License-Identifier: MIT

#include "swedge/distributions.hpp"

#include <doctest.h>

#include <cmath>
#include <initializer_list>

namespace {

// Student-t CDF has closed forms at small integer df; use them as oracles.
double t_cdf_df1(double x) { return 0.5 + std::atan(x) / M_PI; }
double t_cdf_df2(double x) { return 0.5 + x / (2.0 * std::sqrt(2.0 + x * x)); }

}  // namespace

TEST_CASE("incomplete beta closed forms") {
  CHECK(swedge::incomplete_beta(2.0, 2.0, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  // I_x(1, b) = 1 - (1 - x)^b and I_x(a, 1) = x^a.
  for (double x : {0.05, 0.25, 0.5, 0.9}) {
    CHECK(swedge::incomplete_beta(1.0, 3.0, x) ==
          doctest::Approx(1.0 - std::pow(1.0 - x, 3.0)).epsilon(1e-12));
    CHECK(swedge::incomplete_beta(2.5, 1.0, x) ==
          doctest::Approx(std::pow(x, 2.5)).epsilon(1e-12));
  }
  CHECK(swedge::incomplete_beta(3.0, 4.0, 0.0) == 0.0);
  CHECK(swedge::incomplete_beta(3.0, 4.0, 1.0) == 1.0);
  // Symmetry I_x(a, b) = 1 - I_{1-x}(b, a).
  CHECK(swedge::incomplete_beta(3.0, 5.0, 0.3) ==
        doctest::Approx(1.0 - swedge::incomplete_beta(5.0, 3.0, 0.7)).epsilon(1e-12));
}

TEST_CASE("normal cdf reference values") {
  CHECK(swedge::normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(swedge::normal_cdf(1.0) == doctest::Approx(0.841344746068543).epsilon(1e-12));
  CHECK(swedge::normal_cdf(-1.0) == doctest::Approx(1.0 - 0.841344746068543).epsilon(1e-12));
  CHECK(swedge::normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  CHECK(swedge::normal_cdf(8.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("normal quantile inverts the cdf") {
  CHECK(swedge::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
  CHECK(swedge::normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  for (double p : {0.001, 0.01, 0.2, 0.6, 0.95, 0.9999}) {
    CHECK(swedge::normal_cdf(swedge::normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  }
}

TEST_CASE("student t cdf against closed forms") {
  for (double x : {-3.0, -1.0, -0.2, 0.0, 0.7, 2.5, 10.0}) {
    CHECK(swedge::student_t_cdf(x, 1.0) == doctest::Approx(t_cdf_df1(x)).epsilon(1e-12));
    CHECK(swedge::student_t_cdf(x, 2.0) == doctest::Approx(t_cdf_df2(x)).epsilon(1e-12));
  }
  // df = 4 closed form: F(x) = 1/2 + u (3 - u^2) / 4 with u = x / sqrt(x^2 + 4).
  for (double x : {0.0, 0.5, 1.3, 4.2}) {
    const double u = x / std::sqrt(x * x + 4.0);
    const double expect = 0.5 + u * (3.0 - u * u) / 4.0;
    CHECK(swedge::student_t_cdf(x, 4.0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(swedge::student_t_cdf(-x, 4.0) == doctest::Approx(1.0 - expect).epsilon(1e-12));
  }
  // Large df approaches the normal.
  CHECK(swedge::student_t_cdf(1.0, 1e6) == doctest::Approx(swedge::normal_cdf(1.0)).epsilon(1e-6));
}

TEST_CASE("student t quantile inverts the cdf") {
  // Classical table value: t_{0.975, 10} = 2.228138852.
  CHECK(swedge::student_t_quantile(0.975, 10.0) == doctest::Approx(2.228138852).epsilon(1e-8));
  CHECK(swedge::student_t_quantile(0.975, 1.0) == doctest::Approx(12.706204736).epsilon(1e-8));
  for (double df : {1.0, 3.0, 17.0, 88.0}) {
    for (double p : {0.01, 0.3, 0.5, 0.77, 0.995}) {
      const double q = swedge::student_t_quantile(p, df);
      CHECK(swedge::student_t_cdf(q, df) == doctest::Approx(p).epsilon(1e-9));
    }
  }
}

TEST_CASE("two sided p values") {
  CHECK(swedge::two_sided_p_normal(0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(swedge::two_sided_p_normal(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(swedge::two_sided_p_normal(-1.959963984540054) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(swedge::two_sided_p_student_t(2.228138852, 10.0) == doctest::Approx(0.05).epsilon(1e-8));
  CHECK(swedge::two_sided_p_student_t(0.0, 5.0) == doctest::Approx(1.0).epsilon(1e-12));
}
