// SPDX-License-Identifier: MIT
// Regression estimators of the residualized effect tau(lambda0) on rollout
// data: period effects plus period-specific treatment coefficients, with
// optional covariate main effects (AncovaI) or main effects plus
// treatment-by-centered-covariate interactions (AncovaIII). One design
// matrix carries two responses (y and d), so every quantity downstream is
// affine in lambda0 and the Fieller inversion stays closed form.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "swedge/dataset.hpp"
#include "swedge/fieller.hpp"
#include "swedge/ols.hpp"

namespace swedge {

enum class AncovaFlavor { Unadjusted, AncovaI, AncovaIII };
enum class SandwichKind { CR0, CR3 };
enum class ReferenceDist { StudentT, Gaussian };

std::string to_string(AncovaFlavor flavor);
std::string to_string(SandwichKind kind);

struct AncovaSpec {
  AncovaFlavor flavor = AncovaFlavor::Unadjusted;
  // Dataset covariate columns (0-based) entering the adjustment; empty means
  // all of them. Ignored by Unadjusted.
  std::vector<int> covariates;
  // AncovaIII centers the interaction covariates at their per-period means so
  // the period-specific treatment coefficients keep their effect reading.
  bool center_interactions = true;
};

// Coefficients of the variance polynomial S(lambda)^2 = q0 + q1 l + q2 l^2.
struct VarianceQuadratic {
  double q0 = 0.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double at(double lambda) const { return q0 + (q1 + q2 * lambda) * lambda; }
};

// Outcome of a single deviate test of tau(lambda0) = 0.
struct TestResult {
  double lambda0 = 0.0;
  double tau_hat = 0.0;
  double se = 0.0;
  double deviate = 0.0;
  double df = 0.0;  // +infinity under the gaussian reference
  double p_value = 1.0;
  // Set when se == 0; p is pinned to 0 (tau_hat != 0) or 1 (tau_hat == 0).
  bool degenerate_variance = false;

  bool reject(double alpha) const { return p_value < alpha; }
};

// Everything a report row needs for one estimator/variance combination.
struct InferenceResult {
  std::string estimator;
  std::string variance;
  double lambda_hat = 0.0;
  double tau_at_0 = 0.0;
  double se_at_lambda_hat = 0.0;
  double deviate_at_0 = 0.0;
  double df = 0.0;
  double alpha = 0.05;
  double p_value_at_0 = 1.0;
  IntervalSet interval;
  bool degenerate_variance = false;
};

// Two least-squares fits (y and d responses) sharing one design matrix over
// the rollout records. Immutable once constructed; variance quadratics are
// cached per sandwich kind.
class AncovaFit {
 public:
  static AncovaFit fit(const TrialDataset& data, const AncovaSpec& spec);

  int rollout_periods() const { return design_.rollout_periods; }
  int clusters() const { return design_.clusters; }

  // Period-specific treatment coefficients, j in 1..J.
  double theta_y(int j) const;
  double theta_d(int j) const;
  double theta(int j, double lambda0) const { return theta_y(j) - lambda0 * theta_d(j); }

  // Size-weighted combinations sum_j N_j theta_j / N over rollout periods.
  double tau_y() const { return tau_y_; }
  double tau_d() const { return tau_d_; }
  double tau(double lambda0) const { return tau_y_ - lambda0 * tau_d_; }

  // Closed-form root of tau(lambda) = 0. Throws std::runtime_error
  // "weak/null first stage: tau_hat_D = 0" when tau_d() == 0.
  double lambda_hat() const;

  // Cluster-robust variance of tau(lambda) as a polynomial in lambda.
  // CR3 throws when a leave-one-cluster-out design loses rank.
  const VarianceQuadratic& variance_quadratic(SandwichKind kind) const;

  TestResult test(double lambda0, SandwichKind kind, ReferenceDist ref) const;
  IntervalSet invert_ci(SandwichKind kind, ReferenceDist ref, double alpha) const;

  const Eigen::VectorXd& coef_y() const { return beta_y_; }
  const Eigen::VectorXd& coef_d() const { return beta_d_; }
  const std::vector<std::string>& column_names() const;
  const ClusteredDesignMatrix& design_matrix() const { return *xmat_; }

 private:
  AncovaFit() = default;
  void scalar_scores(SandwichKind kind, std::vector<double>& sy, std::vector<double>& sd) const;

  StepWedgeDesign design_;
  std::shared_ptr<const ClusteredDesignMatrix> xmat_;
  Eigen::VectorXd beta_y_;
  Eigen::VectorXd beta_d_;
  Eigen::VectorXd response_y_;
  Eigen::VectorXd response_d_;
  Eigen::VectorXd weight_;  // w with N_j/N on the theta columns
  Eigen::VectorXd bread_w_;  // (X'X)^{-1} w
  double tau_y_ = 0.0;
  double tau_d_ = 0.0;
  mutable std::optional<VarianceQuadratic> quad_[2];
};

// Convenience wrapper: fit, test at lambda0 = 0, point estimate, standard
// error at lambda_hat, and the alpha-level Fieller set, labelled for reports.
InferenceResult ancova_analyze(const TrialDataset& data, const AncovaSpec& spec,
                               SandwichKind kind, ReferenceDist ref, double alpha);

// Critical value shared by the test and the inversion.
double reference_critical_value(ReferenceDist ref, double df, double alpha);

// Two-sided p-value for a deviate, honoring the degenerate-variance policy.
TestResult deviate_test(double lambda0, double tau_hat, double variance, double df,
                        ReferenceDist ref);

}  // namespace swedge
