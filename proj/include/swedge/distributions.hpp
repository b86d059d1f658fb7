// SPDX-License-Identifier: MIT
// Gaussian and Student-t distribution functions.
//
// Implemented from scratch (error function, regularized incomplete beta via
// continued fraction) so that inference never depends on an external
// statistical runtime. Quantiles are computed by monotone bisection, which
// trades a few microseconds for guaranteed-bracketed results.

#pragma once

namespace swedge {

// Regularized incomplete beta function I_x(a, b) for a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

double normal_cdf(double x);
double normal_quantile(double p);

// CDF and quantile of Student's t with (possibly non-integer) df > 0.
double student_t_cdf(double x, double df);
double student_t_quantile(double p, double df);

// Two-sided p-value for an observed deviate under the reference distribution.
double two_sided_p_normal(double deviate);
double two_sided_p_student_t(double deviate, double df);

}  // namespace swedge
