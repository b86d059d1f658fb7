// SPDX-License-Identifier: MIT
// Heuristic checks on trial data: association tests between time on
// intervention/control and the treatment-receipt or outcome response
// (duration relevance would undermine the single-adoption-time reading of
// the data), and a covariate balance table over the rollout periods.

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "swedge/dataset.hpp"

namespace swedge {

// Coefficient test for the time-on-arm slope in one arm-restricted fit.
struct DurationTestResult {
  std::string response;  // "d" (logistic) or "y" (linear)
  std::string arm;       // "intervention" or "control"
  double coefficient = 0.0;
  double se = 0.0;  // CR0 cluster-robust
  double t_stat = 0.0;
  double df = 0.0;  // clusters in the arm minus 2
  double p_value = 1.0;
  long long rows = 0;
  int clusters = 0;
};

// Four fits: {d, y} x {intervention, control} on rollout records, each on
// intercept + time-on-arm + covariates. Time on arm counts periods since
// adoption (treated rows, j - A_i + 1) or since the trial began (control
// rows, j + 1).
std::vector<DurationTestResult> duration_tests(const TrialDataset& data);

struct BalanceRow {
  std::string label;
  double mean_treated = 0.0;
  double sd_treated = 0.0;
  double mean_control = 0.0;
  double sd_control = 0.0;
  double smd = 0.0;          // |m1 - m0| / sqrt((s1^2 + s0^2) / 2)
  bool infinite_smd = false;  // zero pooled SD with unequal means
};

// Arm-wise covariate summaries over rollout records. Labels default to
// x1..xp when not supplied.
std::vector<BalanceRow> balance_table(const TrialDataset& data,
                                      std::vector<std::string> labels = {});

// Logistic regression by iteratively reweighted least squares, exposed for
// oracle testing. Converges when the largest coefficient update falls below
// `tol`; throws on separation (all fitted probabilities pinned to 0/1) and
// on non-convergence, with the update-size trace in the message.
struct LogisticFit {
  Eigen::VectorXd coef;
  int iterations = 0;
  Eigen::VectorXd fitted;  // probabilities at the optimum
};

LogisticFit logistic_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01,
                          const std::vector<std::string>& column_names,
                          const std::string& context, double tol = 1e-10,
                          int max_iterations = 100);

}  // namespace swedge
