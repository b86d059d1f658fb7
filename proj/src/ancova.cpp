// SPDX-License-Identifier: MIT

#include "swedge/ancova.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "swedge/distributions.hpp"

namespace swedge {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> resolve_covariates(const AncovaSpec& spec, int p) {
  if (spec.flavor == AncovaFlavor::Unadjusted) return {};
  std::vector<int> cols = spec.covariates;
  if (cols.empty()) {
    cols.resize(static_cast<std::size_t>(p));
    for (int m = 0; m < p; ++m) cols[static_cast<std::size_t>(m)] = m;
  }
  if (cols.empty())
    throw std::invalid_argument(to_string(spec.flavor) + " requires at least one covariate");
  std::vector<bool> seen(static_cast<std::size_t>(p), false);
  for (int m : cols) {
    if (m < 0 || m >= p)
      throw std::invalid_argument("covariate column x" + std::to_string(m + 1) +
                                  " out of range (dataset has " + std::to_string(p) + ")");
    if (seen[static_cast<std::size_t>(m)])
      throw std::invalid_argument("covariate column x" + std::to_string(m + 1) +
                                  " selected twice");
    seen[static_cast<std::size_t>(m)] = true;
  }
  return cols;
}
}  // namespace

std::string to_string(AncovaFlavor flavor) {
  switch (flavor) {
    case AncovaFlavor::Unadjusted: return "unadjusted";
    case AncovaFlavor::AncovaI: return "ancova1";
    case AncovaFlavor::AncovaIII: return "ancova3";
  }
  return "unadjusted";
}

std::string to_string(SandwichKind kind) {
  return kind == SandwichKind::CR0 ? "cr0" : "cr3";
}

AncovaFit AncovaFit::fit(const TrialDataset& data, const AncovaSpec& spec) {
  const StepWedgeDesign& dz = data.design();
  const int J = dz.rollout_periods;
  const int I = dz.clusters;
  const std::vector<int> covs = resolve_covariates(spec, data.covariate_count());
  const int p_use = static_cast<int>(covs.size());

  // Collect rollout rows and check that every rollout period mixes arms,
  // otherwise its treatment coefficient is not estimable.
  std::vector<std::size_t> rows;
  rows.reserve(static_cast<std::size_t>(data.rollout_count()));
  std::vector<long long> count(static_cast<std::size_t>(J + 1), 0);
  std::vector<long long> treated(static_cast<std::size_t>(J + 1), 0);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const int j = data.period(r);
    if (j < 1 || j > J) continue;
    rows.push_back(r);
    ++count[static_cast<std::size_t>(j)];
    treated[static_cast<std::size_t>(j)] += data.z(r);
  }
  for (int j = 1; j <= J; ++j) {
    const long long nj = count[static_cast<std::size_t>(j)];
    const long long tj = treated[static_cast<std::size_t>(j)];
    if (nj == 0)
      throw std::runtime_error("theta_j unidentified in period " + std::to_string(j) +
                               " (no rollout records)");
    if (tj == 0)
      throw std::runtime_error("theta_j unidentified in period " + std::to_string(j) +
                               " (all clusters control)");
    if (tj == nj)
      throw std::runtime_error("theta_j unidentified in period " + std::to_string(j) +
                               " (all clusters treated)");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());

  // Per-period covariate means over rollout records, for interaction centering.
  std::vector<double> xbar(static_cast<std::size_t>(J + 1) * static_cast<std::size_t>(p_use), 0.0);
  if (spec.flavor == AncovaFlavor::AncovaIII && spec.center_interactions) {
    for (std::size_t r : rows) {
      const int j = data.period(r);
      const double* x = data.x_row(r);
      for (int m = 0; m < p_use; ++m)
        xbar[static_cast<std::size_t>(j) * static_cast<std::size_t>(p_use) +
             static_cast<std::size_t>(m)] += x[covs[static_cast<std::size_t>(m)]];
    }
    for (int j = 1; j <= J; ++j)
      for (int m = 0; m < p_use; ++m)
        xbar[static_cast<std::size_t>(j) * static_cast<std::size_t>(p_use) +
             static_cast<std::size_t>(m)] /= static_cast<double>(count[static_cast<std::size_t>(j)]);
  }

  int cols = 2 * J;
  if (spec.flavor == AncovaFlavor::AncovaI) cols += p_use;
  if (spec.flavor == AncovaFlavor::AncovaIII) cols += 2 * p_use;

  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(cols));
  for (int j = 1; j <= J; ++j) names.push_back("period_" + std::to_string(j));
  for (int j = 1; j <= J; ++j) names.push_back("z_period_" + std::to_string(j));
  if (spec.flavor != AncovaFlavor::Unadjusted)
    for (int m : covs) names.push_back("x" + std::to_string(m + 1));
  if (spec.flavor == AncovaFlavor::AncovaIII)
    for (int m : covs) names.push_back("z_x" + std::to_string(m + 1) + "_centered");

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, cols);
  Eigen::VectorXd yv(n);
  Eigen::VectorXd dv(n);
  std::vector<int> cluster_of_row(rows.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t src = rows[static_cast<std::size_t>(r)];
    const int j = data.period(src);
    const double z = data.z(src);
    X(r, j - 1) = 1.0;
    X(r, J + j - 1) = z;
    if (spec.flavor != AncovaFlavor::Unadjusted) {
      const double* x = data.x_row(src);
      for (int m = 0; m < p_use; ++m) {
        const double xv = x[covs[static_cast<std::size_t>(m)]];
        X(r, 2 * J + m) = xv;
        if (spec.flavor == AncovaFlavor::AncovaIII) {
          const double center =
              spec.center_interactions
                  ? xbar[static_cast<std::size_t>(j) * static_cast<std::size_t>(p_use) +
                         static_cast<std::size_t>(m)]
                  : 0.0;
          X(r, 2 * J + p_use + m) = z * (x[covs[static_cast<std::size_t>(m)]] - center);
        }
      }
    }
    yv[r] = data.y(src);
    dv[r] = static_cast<double>(data.d(src));
    cluster_of_row[static_cast<std::size_t>(r)] = data.cluster_index(src);
  }

  std::vector<std::string> cluster_labels;
  cluster_labels.reserve(static_cast<std::size_t>(I));
  for (long long id : data.cluster_ids()) cluster_labels.push_back(std::to_string(id));

  AncovaFit out;
  out.design_ = dz;
  out.xmat_ = std::make_shared<ClusteredDesignMatrix>(std::move(X), std::move(cluster_of_row), I,
                                                      std::move(names), std::move(cluster_labels));
  out.beta_y_ = out.xmat_->solve(yv);
  out.beta_d_ = out.xmat_->solve(dv);
  out.response_y_ = std::move(yv);
  out.response_d_ = std::move(dv);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(cols);
  const double total = static_cast<double>(rows.size());
  for (int j = 1; j <= J; ++j)
    w[J + j - 1] = static_cast<double>(count[static_cast<std::size_t>(j)]) / total;
  out.weight_ = w;
  out.bread_w_ = out.xmat_->bread_solve(w);
  out.tau_y_ = w.dot(out.beta_y_);
  out.tau_d_ = w.dot(out.beta_d_);
  return out;
}

double AncovaFit::theta_y(int j) const {
  if (j < 1 || j > design_.rollout_periods) throw std::out_of_range("period outside 1..J");
  return beta_y_[design_.rollout_periods + j - 1];
}

double AncovaFit::theta_d(int j) const {
  if (j < 1 || j > design_.rollout_periods) throw std::out_of_range("period outside 1..J");
  return beta_d_[design_.rollout_periods + j - 1];
}

double AncovaFit::lambda_hat() const {
  if (tau_d_ == 0.0) throw std::runtime_error("weak/null first stage: tau_hat_D = 0");
  return tau_y_ / tau_d_;
}

const std::vector<std::string>& AncovaFit::column_names() const {
  return xmat_->column_names();
}

void AncovaFit::scalar_scores(SandwichKind kind, std::vector<double>& sy,
                              std::vector<double>& sd) const {
  const auto scores_y = kind == SandwichKind::CR0
                            ? xmat_->cluster_scores(response_y_, beta_y_)
                            : xmat_->cluster_scores_cr3(response_y_, beta_y_);
  const auto scores_d = kind == SandwichKind::CR0
                            ? xmat_->cluster_scores(response_d_, beta_d_)
                            : xmat_->cluster_scores_cr3(response_d_, beta_d_);
  sy.resize(scores_y.size());
  sd.resize(scores_d.size());
  for (std::size_t c = 0; c < scores_y.size(); ++c) {
    sy[c] = bread_w_.dot(scores_y[c]);
    sd[c] = bread_w_.dot(scores_d[c]);
  }
}

const VarianceQuadratic& AncovaFit::variance_quadratic(SandwichKind kind) const {
  auto& slot = quad_[kind == SandwichKind::CR0 ? 0 : 1];
  if (!slot) {
    std::vector<double> sy;
    std::vector<double> sd;
    scalar_scores(kind, sy, sd);
    VarianceQuadratic q;
    for (std::size_t c = 0; c < sy.size(); ++c) {
      q.q0 += sy[c] * sy[c];
      q.q1 -= 2.0 * sy[c] * sd[c];
      q.q2 += sd[c] * sd[c];
    }
    slot = q;
  }
  return *slot;
}

double reference_critical_value(ReferenceDist ref, double df, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  if (ref == ReferenceDist::Gaussian) return normal_quantile(1.0 - alpha / 2.0);
  if (!(df > 0.0))
    throw std::runtime_error("t reference needs at least 3 clusters (df = I - 2 = " +
                             std::to_string(static_cast<long long>(df)) + ")");
  return student_t_quantile(1.0 - alpha / 2.0, df);
}

TestResult deviate_test(double lambda0, double tau_hat, double variance, double df,
                        ReferenceDist ref) {
  if (variance < 0.0) throw std::invalid_argument("deviate test needs a nonnegative variance");
  TestResult t;
  t.lambda0 = lambda0;
  t.tau_hat = tau_hat;
  t.se = std::sqrt(variance);
  t.df = ref == ReferenceDist::Gaussian ? kInf : df;
  if (t.se > 0.0) {
    t.deviate = tau_hat / t.se;
    t.p_value = ref == ReferenceDist::Gaussian ? two_sided_p_normal(t.deviate)
                                               : two_sided_p_student_t(t.deviate, df);
  } else if (tau_hat != 0.0) {
    t.deviate = tau_hat > 0.0 ? kInf : -kInf;
    t.p_value = 0.0;
    t.degenerate_variance = true;
  } else {
    t.deviate = 0.0;
    t.p_value = 1.0;
    t.degenerate_variance = true;
  }
  return t;
}

TestResult AncovaFit::test(double lambda0, SandwichKind kind, ReferenceDist ref) const {
  const double df = static_cast<double>(design_.clusters - 2);
  if (ref == ReferenceDist::StudentT && !(df > 0.0))
    throw std::runtime_error("t reference needs at least 3 clusters (df = I - 2 = " +
                             std::to_string(design_.clusters - 2) + ")");
  return deviate_test(lambda0, tau(lambda0), variance_quadratic(kind).at(lambda0), df, ref);
}

IntervalSet AncovaFit::invert_ci(SandwichKind kind, ReferenceDist ref, double alpha) const {
  const double df = static_cast<double>(design_.clusters - 2);
  const double crit = reference_critical_value(ref, df, alpha);
  const VarianceQuadratic& q = variance_quadratic(kind);
  return invert_quadratic_test(tau_y_, -tau_d_, q.q0, q.q1, q.q2, crit);
}

InferenceResult ancova_analyze(const TrialDataset& data, const AncovaSpec& spec,
                               SandwichKind kind, ReferenceDist ref, double alpha) {
  const AncovaFit fit = AncovaFit::fit(data, spec);
  const VarianceQuadratic& q = fit.variance_quadratic(kind);
  const TestResult at0 = fit.test(0.0, kind, ref);

  InferenceResult out;
  out.estimator = to_string(spec.flavor);
  out.variance = to_string(kind);
  out.lambda_hat = fit.lambda_hat();
  out.tau_at_0 = at0.tau_hat;
  out.se_at_lambda_hat = std::sqrt(std::max(q.at(out.lambda_hat), 0.0));
  out.deviate_at_0 = at0.deviate;
  out.df = at0.df;
  out.alpha = alpha;
  out.p_value_at_0 = at0.p_value;
  out.interval = fit.invert_ci(kind, ref, alpha);
  out.degenerate_variance = at0.degenerate_variance;
  return out;
}

}  // namespace swedge
