// SPDX-License-Identifier: MIT

#include "swedge/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "swedge/distributions.hpp"
#include "swedge/numio.hpp"
#include "swedge/ols.hpp"

namespace swedge {

namespace {

void require_full_rank_weighted(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                                Eigen::Index cols, const std::vector<std::string>& names,
                                const std::string& context) {
  if (qr.rank() == cols) return;
  const auto& perm = qr.colsPermutation().indices();
  std::string culprits;
  for (Eigen::Index k = qr.rank(); k < cols; ++k) {
    if (!culprits.empty()) culprits += ", ";
    culprits += names[static_cast<std::size_t>(perm[k])];
  }
  throw std::runtime_error(context + ": design matrix is rank deficient (rank " +
                           std::to_string(qr.rank()) + " of " + std::to_string(cols) +
                           "); collinear columns: " + culprits);
}

}  // namespace

LogisticFit logistic_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01,
                          const std::vector<std::string>& column_names,
                          const std::string& context, double tol, int max_iterations) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (y01.size() != n) throw std::invalid_argument("response length does not match row count");
  for (Eigen::Index r = 0; r < n; ++r)
    if (y01[r] != 0.0 && y01[r] != 1.0)
      throw std::invalid_argument("logistic response must be 0/1");

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta(n);
  Eigen::VectorXd mu(n);
  std::vector<double> deltas;
  deltas.reserve(static_cast<std::size_t>(max_iterations));
  for (int iter = 1; iter <= max_iterations; ++iter) {
    eta = x * beta;
    double max_resid = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      mu[r] = 1.0 / (1.0 + std::exp(-eta[r]));
      max_resid = std::max(max_resid, std::abs(y01[r] - mu[r]));
    }
    // All probabilities pinned to the observed labels means the likelihood
    // has no maximizer; the data are separated.
    if (max_resid < 1e-8)
      throw std::runtime_error("separation in the logistic fit for the " + context +
                               " (all fitted probabilities 0 or 1)");

    Eigen::VectorXd sw(n);  // sqrt of the IRLS weights mu (1 - mu)
    Eigen::VectorXd z(n);   // working response, pre-scaled by sqrt(w)
    for (Eigen::Index r = 0; r < n; ++r) {
      const double w = std::max(mu[r] * (1.0 - mu[r]), 1e-12);
      sw[r] = std::sqrt(w);
      z[r] = sw[r] * eta[r] + (y01[r] - mu[r]) / sw[r];
    }
    const Eigen::MatrixXd xw = sw.asDiagonal() * x;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
    require_full_rank_weighted(qr, p, column_names, "logistic fit for the " + context);
    const Eigen::VectorXd next = qr.solve(z);
    const double delta = (next - beta).cwiseAbs().maxCoeff();
    deltas.push_back(delta);
    beta = next;
    if (delta < tol) {
      LogisticFit fit;
      fit.coef = std::move(beta);
      fit.iterations = iter;
      eta = x * fit.coef;
      fit.fitted = (1.0 + (-eta.array()).exp()).inverse().matrix();
      return fit;
    }
  }
  std::string trace;
  const std::size_t shown = std::min<std::size_t>(deltas.size(), 5);
  for (std::size_t k = deltas.size() - shown; k < deltas.size(); ++k) {
    if (!trace.empty()) trace += ", ";
    trace += format_double(deltas[k]);
  }
  throw std::runtime_error("logistic fit for the " + context + " did not converge after " +
                           std::to_string(max_iterations) +
                           " iterations; last coefficient updates: " + trace);
}

namespace {

struct ArmRows {
  std::vector<std::size_t> rows;
  std::vector<int> cluster_dense;  // arm-local cluster index per row
  int cluster_count = 0;
  std::vector<std::string> cluster_labels;
};

ArmRows collect_arm(const TrialDataset& data, int arm) {
  const int J = data.design().rollout_periods;
  ArmRows out;
  std::map<int, int> dense;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const int j = data.period(r);
    if (j < 1 || j > J) continue;
    if (data.z(r) != arm) continue;
    out.rows.push_back(r);
    const int ci = data.cluster_index(r);
    auto [it, inserted] = dense.emplace(ci, out.cluster_count);
    if (inserted) {
      ++out.cluster_count;
      out.cluster_labels.push_back(std::to_string(data.cluster_ids()[static_cast<std::size_t>(ci)]));
    }
    out.cluster_dense.push_back(it->second);
  }
  return out;
}

double time_on_arm(const TrialDataset& data, std::size_t row) {
  const int j = data.period(row);
  if (data.z(row) == 1) {
    const int adoption =
        data.assignment().adoption[static_cast<std::size_t>(data.cluster_index(row))];
    return static_cast<double>(j - adoption + 1);
  }
  return static_cast<double>(j + 1);
}

DurationTestResult run_duration_fit(const TrialDataset& data, const ArmRows& arm_rows,
                                    int arm, bool logistic) {
  const int p = data.covariate_count();
  const Eigen::Index n = static_cast<Eigen::Index>(arm_rows.rows.size());
  const std::string arm_name = arm == 1 ? "intervention arm" : "control arm";
  const int cols = 2 + p;
  if (n < cols)
    throw std::runtime_error("duration test for the " + arm_name + " needs at least " +
                             std::to_string(cols) + " rows (have " + std::to_string(n) + ")");
  const double df = static_cast<double>(arm_rows.cluster_count - 2);
  if (!(df > 0.0))
    throw std::runtime_error("duration test for the " + arm_name +
                             " needs at least 3 clusters (have " +
                             std::to_string(arm_rows.cluster_count) + ")");

  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(cols));
  names.emplace_back("intercept");
  names.emplace_back("time_on_arm");
  for (int m = 0; m < p; ++m) names.push_back("x" + std::to_string(m + 1));

  Eigen::MatrixXd X(n, cols);
  Eigen::VectorXd resp(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t src = arm_rows.rows[static_cast<std::size_t>(r)];
    X(r, 0) = 1.0;
    X(r, 1) = time_on_arm(data, src);
    const double* x = data.x_row(src);
    for (int m = 0; m < p; ++m) X(r, 2 + m) = x[m];
    resp[r] = logistic ? static_cast<double>(data.d(src)) : data.y(src);
  }

  Eigen::VectorXd coef;
  std::vector<Eigen::VectorXd> scores(static_cast<std::size_t>(arm_rows.cluster_count),
                                      Eigen::VectorXd::Zero(cols));
  Eigen::VectorXd bread_w;
  if (logistic) {
    const LogisticFit fit = logistic_irls(X, resp, names, arm_name);
    coef = fit.coef;
    // GLM score contributions X_c' (y_c - mu_c); bread is (X' W X)^{-1}.
    for (Eigen::Index r = 0; r < n; ++r)
      scores[static_cast<std::size_t>(arm_rows.cluster_dense[static_cast<std::size_t>(r)])] +=
          (resp[r] - fit.fitted[r]) * X.row(r).transpose();
    Eigen::MatrixXd xwx = Eigen::MatrixXd::Zero(cols, cols);
    for (Eigen::Index r = 0; r < n; ++r)
      xwx.noalias() +=
          fit.fitted[r] * (1.0 - fit.fitted[r]) * X.row(r).transpose() * X.row(r);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(cols);
    w[1] = 1.0;
    bread_w = xwx.ldlt().solve(w);
  } else {
    ClusteredDesignMatrix design(X, arm_rows.cluster_dense, arm_rows.cluster_count, names,
                                 arm_rows.cluster_labels);
    coef = design.solve(resp);
    scores = design.cluster_scores(resp, coef);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(cols);
    w[1] = 1.0;
    bread_w = design.bread_solve(w);
  }

  DurationTestResult out;
  out.response = logistic ? "d" : "y";
  out.arm = arm == 1 ? "intervention" : "control";
  out.coefficient = coef[1];
  out.se = std::sqrt(contrast_variance(bread_w, scores));
  out.df = df;
  out.rows = n;
  out.clusters = arm_rows.cluster_count;
  if (out.se > 0.0) {
    out.t_stat = out.coefficient / out.se;
    out.p_value = two_sided_p_student_t(out.t_stat, df);
  } else {
    out.t_stat = 0.0;
    out.p_value = out.coefficient == 0.0 ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace

std::vector<DurationTestResult> duration_tests(const TrialDataset& data) {
  const ArmRows treated = collect_arm(data, 1);
  const ArmRows control = collect_arm(data, 0);
  std::vector<DurationTestResult> out;
  out.reserve(4);
  out.push_back(run_duration_fit(data, treated, 1, true));
  out.push_back(run_duration_fit(data, control, 0, true));
  out.push_back(run_duration_fit(data, treated, 1, false));
  out.push_back(run_duration_fit(data, control, 0, false));
  return out;
}

std::vector<BalanceRow> balance_table(const TrialDataset& data,
                                      std::vector<std::string> labels) {
  const int p = data.covariate_count();
  if (labels.empty()) {
    labels.reserve(static_cast<std::size_t>(p));
    for (int m = 0; m < p; ++m) labels.push_back("x" + std::to_string(m + 1));
  }
  if (static_cast<int>(labels.size()) != p)
    throw std::invalid_argument("balance table needs one label per covariate");

  const int J = data.design().rollout_periods;
  std::vector<double> sum[2];
  std::vector<double> sumsq[2];
  long long count[2] = {0, 0};
  for (int arm = 0; arm < 2; ++arm) {
    sum[arm].assign(static_cast<std::size_t>(p), 0.0);
    sumsq[arm].assign(static_cast<std::size_t>(p), 0.0);
  }
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const int j = data.period(r);
    if (j < 1 || j > J) continue;
    const int arm = data.z(r);
    ++count[arm];
    const double* x = data.x_row(r);
    for (int m = 0; m < p; ++m) {
      sum[arm][static_cast<std::size_t>(m)] += x[m];
      sumsq[arm][static_cast<std::size_t>(m)] += x[m] * x[m];
    }
  }
  if (count[0] == 0 || count[1] == 0)
    throw std::runtime_error("balance table needs rollout records in both arms");

  std::vector<BalanceRow> out;
  out.reserve(static_cast<std::size_t>(p));
  for (int m = 0; m < p; ++m) {
    BalanceRow row;
    row.label = labels[static_cast<std::size_t>(m)];
    double mean[2];
    double sd[2];
    for (int arm = 0; arm < 2; ++arm) {
      const double n = static_cast<double>(count[arm]);
      mean[arm] = sum[arm][static_cast<std::size_t>(m)] / n;
      if (count[arm] > 1) {
        const double ss =
            sumsq[arm][static_cast<std::size_t>(m)] - n * mean[arm] * mean[arm];
        sd[arm] = std::sqrt(std::max(ss, 0.0) / (n - 1.0));
      } else {
        sd[arm] = 0.0;
      }
    }
    row.mean_treated = mean[1];
    row.sd_treated = sd[1];
    row.mean_control = mean[0];
    row.sd_control = sd[0];
    const double pooled = std::sqrt((sd[1] * sd[1] + sd[0] * sd[0]) / 2.0);
    if (pooled > 0.0) {
      row.smd = std::abs(mean[1] - mean[0]) / pooled;
    } else if (mean[1] == mean[0]) {
      row.smd = 0.0;
    } else {
      row.smd = std::numeric_limits<double>::infinity();
      row.infinite_smd = true;
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace swedge
