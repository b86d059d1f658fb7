// SPDX-License-Identifier: MIT
// Horvitz-Thompson estimation of the residualized effect on rollout cells:
// inverse-propensity point estimator, conservative and simplified variance
// estimators with the structural-zero correction terms, optional linear
// covariate adjustment fitted on pre/post-rollout (or arm-wise full) data,
// exact randomization moments, and the position-grid decomposition used by
// the combinatorial CLT. Everything is affine or quadratic in lambda, with
// coefficients exposed for closed-form Fieller inversion.

#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "swedge/ancova.hpp"
#include "swedge/dataset.hpp"
#include "swedge/design.hpp"
#include "swedge/fieller.hpp"

namespace swedge {

enum class HtAdjustment { None, PrePostRollout, FullData };
enum class HtVarianceKind { Conservative, Simplified };

std::string to_string(HtAdjustment adjustment);
std::string to_string(HtVarianceKind kind);

struct HtSpec {
  HtAdjustment adjustment = HtAdjustment::None;
  HtVarianceKind variance = HtVarianceKind::Conservative;
  // Dataset covariate columns feeding the adjustment fits; empty means all.
  std::vector<int> covariates;
};

// Order-2 assignment probabilities for rollout cells, one instance per
// design. Values come from the exact joint-probability machinery; structural
// zeros are decided in rational arithmetic, never by comparing a double to
// zero. Reusable across replicates that share a design.
class PairProbabilities {
 public:
  explicit PairProbabilities(const StepWedgeDesign& design);

  const StepWedgeDesign& design() const { return design_; }
  int rollout_periods() const { return J_; }
  // P(Z_ij = 1) for a rollout period.
  double marginal(int period) const;
  // P(Z_{i,j} = z, Z_{i',j'} = zp); same_cluster selects i == i'.
  double pair(int z, int period, int zp, int period2, bool same_cluster) const;
  bool is_zero(int z, int period, int zp, int period2, bool same_cluster) const;

 private:
  std::size_t index(int z, int period, int zp, int period2, bool same_cluster) const;

  StepWedgeDesign design_;
  int J_ = 0;
  std::vector<double> marginal_;
  std::vector<double> prob_;
  std::vector<char> zero_;
};

// Arm-specific linear predictors for the residualized outcome, stored as
// separate y and d coefficient vectors over (1, covariates) so that
// g_a(x; lambda) = g_y(x) - lambda * g_d(x) holds exactly at any lambda.
struct AdjustmentModel {
  HtAdjustment mode = HtAdjustment::None;
  std::vector<int> covariates;
  Eigen::VectorXd coef_y[2];  // indexed by arm
  Eigen::VectorXd coef_d[2];

  double predict_y(int arm, const double* x) const;
  double predict_d(int arm, const double* x) const;
};

// Fits the two arms' predictors.
//  * PrePostRollout: the control predictor comes from period 0, the treated
//    predictor from period J+1. Both fitting sets are fixed by the design,
//    not by the realized assignment, so the adjusted estimator stays
//    unbiased over the randomization distribution.
//  * FullData: the control fit additionally uses control rollout records and
//    the treated fit uses treated rollout records; assignment dependent.
// Throws when a fitting set has fewer than p+2 rows or is rank deficient.
AdjustmentModel fit_adjustment(const TrialDataset& data, HtAdjustment mode,
                               std::vector<int> covariates = {});

// Decline policy for the normal-reference test: a negative variance estimate
// is reported, never clamped, and the test is declined with a diagnostic.
struct HtTestOutcome {
  bool declined = false;
  std::string diagnostic;
  TestResult result;  // meaningful only when declined is false
};

HtTestOutcome ht_deviate_test(double lambda0, double tau_hat, double variance);

// One dataset's Horvitz-Thompson analysis. Cell totals, adjustment
// aggregates, the point-estimate affine pair, and both variance quadratics
// are assembled once at construction.
class HtAnalysis {
 public:
  HtAnalysis(const TrialDataset& data, const HtSpec& spec,
             std::shared_ptr<const PairProbabilities> probs = nullptr);

  // tau(lambda) = tau_y - lambda * tau_d.
  double tau_y() const { return tau_y_; }
  double tau_d() const { return tau_d_; }
  double tau(double lambda0) const { return tau_y_ - lambda0 * tau_d_; }

  // Root of tau(lambda) = 0; throws "weak/null first stage: tau_hat_D = 0".
  double lambda_hat() const;

  const VarianceQuadratic& variance_quadratic() const;  // the spec's kind
  const VarianceQuadratic& variance_quadratic(HtVarianceKind kind) const;

  // Deviate test against the standard normal; declined when the variance
  // estimate is negative at lambda0.
  HtTestOutcome test(double lambda0) const;
  IntervalSet invert_ci(double alpha) const;

  const HtSpec& spec() const { return spec_; }
  const AdjustmentModel* adjustment() const { return model_ ? &*model_ : nullptr; }

 private:
  HtSpec spec_;
  std::shared_ptr<const PairProbabilities> probs_;
  std::unique_ptr<AdjustmentModel> model_;
  double tau_y_ = 0.0;
  double tau_d_ = 0.0;
  VarianceQuadratic quad_simplified_;
  VarianceQuadratic quad_conservative_;
};

// Fit, test at 0, point estimate, and alpha-level interval for a report row.
// Throws when the test at 0 is declined.
InferenceResult ht_analyze(const TrialDataset& data, const HtSpec& spec, double alpha);

// Exact randomization mean and variance of the unadjusted estimator for a
// fully specified potential-outcome table (testing and calibration only).
struct ExactMoments {
  double mean = 0.0;
  double variance = 0.0;
  double var_treated = 0.0;
  double var_control = 0.0;
  double covariance = 0.0;
};

ExactMoments exact_moments(const PotentialOutcomeTable& table, double lambda0);

// Position grid c(i, l): cluster i's contribution to the estimator when it
// adopts l-th in line (0-based l; adoption period is the design's
// position_adoption_time). The estimator realized under line positions V is
// sum_i c(i, V_i); the sum of row means recovers the estimand exactly.
struct CltGrid {
  Eigen::MatrixXd c;           // I x I
  Eigen::VectorXd row_means;   // (1/I) sum_l c(i, l)
  Eigen::VectorXd col_means;   // (1/I) sum_i c(i, l)
  double overall_mean = 0.0;   // sum_i row_means(i)

  double realized(const std::vector<int>& positions) const;
};

CltGrid build_clt_grid(const PotentialOutcomeTable& table, double lambda0);

}  // namespace swedge
