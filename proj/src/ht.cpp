// SPDX-License-Identifier: MIT

#include "swedge/ht.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "swedge/distributions.hpp"
#include "swedge/numio.hpp"

namespace swedge {

namespace {

// Per-cell value of the form y - lambda * d.
struct Affine {
  double y = 0.0;
  double d = 0.0;
};

// Accumulate w * u_a(lambda) * u_b(lambda) into a quadratic in lambda.
void add_product(VarianceQuadratic& q, double w, const Affine& a, const Affine& b) {
  q.q0 += w * a.y * b.y;
  q.q1 -= w * (a.y * b.d + a.d * b.y);
  q.q2 += w * a.d * b.d;
}

std::vector<int> resolve_adjustment_covariates(const std::vector<int>& requested, int p) {
  std::vector<int> cols = requested;
  if (cols.empty()) {
    cols.resize(static_cast<std::size_t>(p));
    for (int m = 0; m < p; ++m) cols[static_cast<std::size_t>(m)] = m;
  }
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

std::string to_string(HtAdjustment adjustment) {
  switch (adjustment) {
    case HtAdjustment::None: return "ht";
    case HtAdjustment::PrePostRollout: return "ht-adj-prepost";
    case HtAdjustment::FullData: return "ht-adj-full";
  }
  return "ht";
}

std::string to_string(HtVarianceKind kind) {
  return kind == HtVarianceKind::Conservative ? "ht-conservative" : "ht-simplified";
}

PairProbabilities::PairProbabilities(const StepWedgeDesign& design) : design_(design) {
  design_.validate();
  J_ = design_.rollout_periods;
  marginal_.assign(static_cast<std::size_t>(J_ + 1), 0.0);
  for (int j = 1; j <= J_; ++j)
    marginal_[static_cast<std::size_t>(j)] = propensity_exact(design_, j).to_double();

  const std::size_t n = 2u * 2u * static_cast<std::size_t>(J_ + 1) *
                        static_cast<std::size_t>(J_ + 1) * 2u;
  prob_.assign(n, 0.0);
  zero_.assign(n, 1);
  for (int z = 0; z < 2; ++z)
    for (int zp = 0; zp < 2; ++zp)
      for (int j = 1; j <= J_; ++j)
        for (int jp = 1; jp <= J_; ++jp)
          for (int same = 0; same < 2; ++same) {
            const std::vector<CellCondition> conds = {{0, j, z}, {same ? 0 : 1, jp, zp}};
            const Rational r = joint_probability(design_, conds);
            const std::size_t at = index(z, j, zp, jp, same != 0);
            prob_[at] = r.to_double();
            zero_[at] = r.num() == 0 ? 1 : 0;
          }
}

std::size_t PairProbabilities::index(int z, int period, int zp, int period2,
                                     bool same_cluster) const {
  if (period < 1 || period > J_ || period2 < 1 || period2 > J_)
    throw std::out_of_range("pair probability requested outside rollout periods");
  const std::size_t span = static_cast<std::size_t>(J_ + 1);
  return (((static_cast<std::size_t>(z) * 2 + static_cast<std::size_t>(zp)) * span +
           static_cast<std::size_t>(period)) *
              span +
          static_cast<std::size_t>(period2)) *
             2 +
         (same_cluster ? 1 : 0);
}

double PairProbabilities::marginal(int period) const {
  if (period < 1 || period > J_)
    throw std::out_of_range("marginal propensity requested outside rollout periods");
  return marginal_[static_cast<std::size_t>(period)];
}

double PairProbabilities::pair(int z, int period, int zp, int period2, bool same_cluster) const {
  return prob_[index(z, period, zp, period2, same_cluster)];
}

bool PairProbabilities::is_zero(int z, int period, int zp, int period2, bool same_cluster) const {
  return zero_[index(z, period, zp, period2, same_cluster)] != 0;
}

double AdjustmentModel::predict_y(int arm, const double* x) const {
  const Eigen::VectorXd& c = coef_y[arm];
  double v = c[0];
  for (std::size_t m = 0; m < covariates.size(); ++m)
    v += c[static_cast<Eigen::Index>(m) + 1] * x[covariates[m]];
  return v;
}

double AdjustmentModel::predict_d(int arm, const double* x) const {
  const Eigen::VectorXd& c = coef_d[arm];
  double v = c[0];
  for (std::size_t m = 0; m < covariates.size(); ++m)
    v += c[static_cast<Eigen::Index>(m) + 1] * x[covariates[m]];
  return v;
}

AdjustmentModel fit_adjustment(const TrialDataset& data, HtAdjustment mode,
                               std::vector<int> covariates) {
  if (mode == HtAdjustment::None)
    throw std::invalid_argument("fit_adjustment called without an adjustment mode");
  const StepWedgeDesign& dz = data.design();
  const int post = dz.post_period();
  const std::vector<int> cols = resolve_adjustment_covariates(covariates, data.covariate_count());
  const int p_use = static_cast<int>(cols.size());

  std::vector<std::size_t> arm_rows[2];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const int j = data.period(r);
    if (j == 0) {
      arm_rows[0].push_back(r);
    } else if (j == post) {
      arm_rows[1].push_back(r);
    } else if (mode == HtAdjustment::FullData) {
      arm_rows[data.z(r)].push_back(r);
    }
  }

  AdjustmentModel model;
  model.mode = mode;
  model.covariates = cols;
  for (int arm = 0; arm < 2; ++arm) {
    const auto& rows = arm_rows[arm];
    const char* label = arm == 0 ? "control arm" : "treated arm";
    if (rows.size() < static_cast<std::size_t>(p_use) + 2)
      throw std::runtime_error("adjustment fit for the " + std::string(label) +
                               " needs at least " + std::to_string(p_use + 2) +
                               " rows (have " + std::to_string(rows.size()) + ")");
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), p_use + 1);
    Eigen::VectorXd yv(static_cast<Eigen::Index>(rows.size()));
    Eigen::VectorXd dv(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* x = data.x_row(rows[r]);
      X(static_cast<Eigen::Index>(r), 0) = 1.0;
      for (int m = 0; m < p_use; ++m)
        X(static_cast<Eigen::Index>(r), m + 1) = x[cols[static_cast<std::size_t>(m)]];
      yv[static_cast<Eigen::Index>(r)] = data.y(rows[r]);
      dv[static_cast<Eigen::Index>(r)] = static_cast<double>(data.d(rows[r]));
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < X.cols()) {
      const auto& perm = qr.colsPermutation().indices();
      std::string culprits;
      for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) {
        if (!culprits.empty()) culprits += ", ";
        const Eigen::Index col = perm[k];
        culprits += col == 0 ? std::string("intercept")
                             : "x" + std::to_string(cols[static_cast<std::size_t>(col - 1)] + 1);
      }
      throw std::runtime_error("adjustment fit for the " + std::string(label) +
                               " is rank deficient; collinear columns: " + culprits);
    }
    model.coef_y[arm] = qr.solve(yv);
    model.coef_d[arm] = qr.solve(dv);
  }
  return model;
}

HtTestOutcome ht_deviate_test(double lambda0, double tau_hat, double variance) {
  HtTestOutcome out;
  if (variance < 0.0) {
    out.declined = true;
    out.diagnostic = "variance estimate " + format_double(variance) +
                     " is negative at lambda0 = " + format_double(lambda0) +
                     "; test declined";
    return out;
  }
  out.result = deviate_test(lambda0, tau_hat, variance,
                            std::numeric_limits<double>::infinity(), ReferenceDist::Gaussian);
  return out;
}

HtAnalysis::HtAnalysis(const TrialDataset& data, const HtSpec& spec,
                       std::shared_ptr<const PairProbabilities> probs)
    : spec_(spec), probs_(std::move(probs)) {
  const StepWedgeDesign& dz = data.design();
  const int I = dz.clusters;
  const int J = dz.rollout_periods;
  const long long n_total = data.rollout_count();
  if (n_total == 0) throw std::runtime_error("no rollout records");

  if (!probs_) probs_ = std::make_shared<PairProbabilities>(dz);
  if (!(probs_->design() == dz))
    throw std::invalid_argument("pair-probability table built for a different design");

  std::vector<double> e(static_cast<std::size_t>(J + 1), 0.0);
  for (int j = 1; j <= J; ++j) {
    e[static_cast<std::size_t>(j)] = probs_->marginal(j);
    if (e[static_cast<std::size_t>(j)] <= 0.0 || e[static_cast<std::size_t>(j)] >= 1.0)
      throw std::runtime_error("propensity is " + format_double(e[static_cast<std::size_t>(j)]) +
                               " in rollout period " + std::to_string(j) +
                               "; positivity fails");
  }

  const std::size_t cells = static_cast<std::size_t>(I) * static_cast<std::size_t>(J);
  auto cell_of = [J](int i, int j) {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(J) +
           static_cast<std::size_t>(j - 1);
  };
  std::vector<Affine> total(cells);         // observed residual totals
  std::vector<Affine> gagg[2];              // adjustment aggregates per arm
  gagg[0].assign(cells, Affine{});
  gagg[1].assign(cells, Affine{});

  if (spec_.adjustment != HtAdjustment::None)
    model_ = std::make_unique<AdjustmentModel>(
        fit_adjustment(data, spec_.adjustment, spec_.covariates));

  for (std::size_t r = 0; r < data.rows(); ++r) {
    const int j = data.period(r);
    if (j < 1 || j > J) continue;
    const std::size_t c = cell_of(data.cluster_index(r), j);
    total[c].y += data.y(r);
    total[c].d += static_cast<double>(data.d(r));
    if (model_) {
      const double* x = data.x_row(r);
      for (int arm = 0; arm < 2; ++arm) {
        gagg[arm][c].y += model_->predict_y(arm, x);
        gagg[arm][c].d += model_->predict_d(arm, x);
      }
    }
  }

  const AssignmentRealization& assignment = data.assignment();
  std::vector<int> zc(cells, 0);
  std::vector<int> period_of(cells, 0);
  std::vector<int> cluster_of(cells, 0);
  std::vector<Affine> u(cells);  // totals with the realized arm's adjustment removed
  for (int i = 0; i < I; ++i)
    for (int j = 1; j <= J; ++j) {
      const std::size_t c = cell_of(i, j);
      zc[c] = assignment.z(i, j);
      period_of[c] = j;
      cluster_of[c] = i;
      u[c].y = total[c].y - gagg[zc[c]][c].y;
      u[c].d = total[c].d - gagg[zc[c]][c].d;
    }

  // Point estimate: weighted arm-specific residual with the fitted mean
  // removed inside the inverse-propensity term and added back unweighted.
  const double inv_n = 1.0 / static_cast<double>(n_total);
  for (std::size_t c = 0; c < cells; ++c) {
    const double ej = e[static_cast<std::size_t>(period_of[c])];
    double wy;
    double wd;
    if (zc[c] == 1) {
      wy = (total[c].y - gagg[1][c].y) / ej;
      wd = (total[c].d - gagg[1][c].d) / ej;
    } else {
      wy = -(total[c].y - gagg[0][c].y) / (1.0 - ej);
      wd = -(total[c].d - gagg[0][c].d) / (1.0 - ej);
    }
    tau_y_ += inv_n * (wy + gagg[1][c].y - gagg[0][c].y);
    tau_d_ += inv_n * (wd + gagg[1][c].d - gagg[0][c].d);
  }

  // Variance quadratics. Base terms estimate the identified part of the
  // variance; the correction terms replace the never-observed co-assignment
  // products (structural-zero pairs) by conservative half-square bounds.
  VarianceQuadratic base;
  VarianceQuadratic corr;
  for (std::size_t a = 0; a < cells; ++a) {
    const double ea = e[static_cast<std::size_t>(period_of[a])];
    if (zc[a] == 1)
      add_product(base, (1.0 - ea) / (ea * ea), u[a], u[a]);
    else
      add_product(base, ea / ((1.0 - ea) * (1.0 - ea)), u[a], u[a]);
  }
  for (std::size_t a = 0; a < cells; ++a) {
    const int ja = period_of[a];
    const double ea = e[static_cast<std::size_t>(ja)];
    for (std::size_t b = 0; b < cells; ++b) {
      const int jb = period_of[b];
      const double eb = e[static_cast<std::size_t>(jb)];
      const bool same = cluster_of[a] == cluster_of[b];
      if (a != b) {
        if (zc[a] == 1 && zc[b] == 1 && !probs_->is_zero(1, ja, 1, jb, same)) {
          const double p11 = probs_->pair(1, ja, 1, jb, same);
          add_product(base, (p11 - ea * eb) / (p11 * ea * eb), u[a], u[b]);
        }
        if (zc[a] == 0 && zc[b] == 0 && !probs_->is_zero(0, ja, 0, jb, same)) {
          const double p00 = probs_->pair(0, ja, 0, jb, same);
          add_product(base, (p00 - (1.0 - ea) * (1.0 - eb)) / (p00 * (1.0 - ea) * (1.0 - eb)),
                      u[a], u[b]);
        }
        // Covariance cross term; enters the total with weight -2.
        if (zc[a] == 1 && zc[b] == 0 && !probs_->is_zero(1, ja, 0, jb, same)) {
          const double p10 = probs_->pair(1, ja, 0, jb, same);
          add_product(base, -2.0 * (p10 - ea * (1.0 - eb)) / (p10 * ea * (1.0 - eb)),
                      u[a], u[b]);
        }
      }
      // Conservative corrections, one bracket per ordered structural-zero
      // pair exactly as displayed (the covariance sum includes a == b, where
      // treated-and-control in one cell is impossible by construction).
      if (probs_->is_zero(1, ja, 1, jb, same)) {
        if (zc[a] == 1) add_product(corr, 0.5 / ea, u[a], u[a]);
        if (zc[b] == 1) add_product(corr, 0.5 / eb, u[b], u[b]);
      }
      if (probs_->is_zero(0, ja, 0, jb, same)) {
        if (zc[a] == 0) add_product(corr, 0.5 / (1.0 - ea), u[a], u[a]);
        if (zc[b] == 0) add_product(corr, 0.5 / (1.0 - eb), u[b], u[b]);
      }
      if (probs_->is_zero(1, ja, 0, jb, same)) {
        if (zc[a] == 1) add_product(corr, 1.0 / ea, u[a], u[a]);
        if (zc[b] == 0) add_product(corr, 1.0 / (1.0 - eb), u[b], u[b]);
      }
    }
  }
  const double inv_n2 = inv_n * inv_n;
  quad_simplified_ = {base.q0 * inv_n2, base.q1 * inv_n2, base.q2 * inv_n2};
  quad_conservative_ = {(base.q0 + corr.q0) * inv_n2, (base.q1 + corr.q1) * inv_n2,
                        (base.q2 + corr.q2) * inv_n2};
}

double HtAnalysis::lambda_hat() const {
  if (tau_d_ == 0.0) throw std::runtime_error("weak/null first stage: tau_hat_D = 0");
  return tau_y_ / tau_d_;
}

const VarianceQuadratic& HtAnalysis::variance_quadratic() const {
  return variance_quadratic(spec_.variance);
}

const VarianceQuadratic& HtAnalysis::variance_quadratic(HtVarianceKind kind) const {
  return kind == HtVarianceKind::Conservative ? quad_conservative_ : quad_simplified_;
}

HtTestOutcome HtAnalysis::test(double lambda0) const {
  return ht_deviate_test(lambda0, tau(lambda0), variance_quadratic().at(lambda0));
}

IntervalSet HtAnalysis::invert_ci(double alpha) const {
  const double crit = reference_critical_value(ReferenceDist::Gaussian, 0.0, alpha);
  const VarianceQuadratic& q = variance_quadratic();
  return invert_quadratic_test(tau_y_, -tau_d_, q.q0, q.q1, q.q2, crit);
}

InferenceResult ht_analyze(const TrialDataset& data, const HtSpec& spec, double alpha) {
  const HtAnalysis an(data, spec);
  const HtTestOutcome at0 = an.test(0.0);
  if (at0.declined) throw std::runtime_error(at0.diagnostic);

  InferenceResult out;
  out.estimator = to_string(spec.adjustment);
  out.variance = to_string(spec.variance);
  out.lambda_hat = an.lambda_hat();
  out.tau_at_0 = at0.result.tau_hat;
  const double v_at_lh = an.variance_quadratic().at(out.lambda_hat);
  if (v_at_lh >= 0.0) {
    out.se_at_lambda_hat = std::sqrt(v_at_lh);
  } else {
    out.se_at_lambda_hat = std::numeric_limits<double>::quiet_NaN();
    out.degenerate_variance = true;
  }
  out.deviate_at_0 = at0.result.deviate;
  out.df = std::numeric_limits<double>::infinity();
  out.alpha = alpha;
  out.p_value_at_0 = at0.result.p_value;
  out.interval = an.invert_ci(alpha);
  out.degenerate_variance = out.degenerate_variance || at0.result.degenerate_variance;
  return out;
}

ExactMoments exact_moments(const PotentialOutcomeTable& table, double lambda0) {
  const StepWedgeDesign& dz = table.design();
  const int I = dz.clusters;
  const int J = dz.rollout_periods;
  const PairProbabilities probs(dz);

  const std::size_t cells = static_cast<std::size_t>(I) * static_cast<std::size_t>(J);
  std::vector<double> t1(cells, 0.0);
  std::vector<double> t0(cells, 0.0);
  long long n_total = 0;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const int j = table.period(r);
    if (j < 1 || j > J) continue;
    const std::size_t c = static_cast<std::size_t>(table.cluster_index(r)) *
                              static_cast<std::size_t>(J) +
                          static_cast<std::size_t>(j - 1);
    t1[c] += table.y1(r) - lambda0 * table.d1(r);
    t0[c] += table.y0(r) - lambda0 * table.d0(r);
    ++n_total;
  }
  if (n_total == 0) throw std::runtime_error("potential-outcome table has no rollout rows");

  std::vector<int> period_of(cells);
  std::vector<int> cluster_of(cells);
  for (int i = 0; i < I; ++i)
    for (int j = 1; j <= J; ++j) {
      const std::size_t c =
          static_cast<std::size_t>(i) * static_cast<std::size_t>(J) + static_cast<std::size_t>(j - 1);
      period_of[c] = j;
      cluster_of[c] = i;
    }

  double var1 = 0.0;
  double var0 = 0.0;
  double cov = 0.0;
  double mean = 0.0;
  for (std::size_t a = 0; a < cells; ++a) {
    const double ea = probs.marginal(period_of[a]);
    var1 += (1.0 - ea) / ea * t1[a] * t1[a];
    var0 += ea / (1.0 - ea) * t0[a] * t0[a];
    cov -= t1[a] * t0[a];
    mean += t1[a] - t0[a];
  }
  for (std::size_t a = 0; a < cells; ++a) {
    const int ja = period_of[a];
    const double ea = probs.marginal(ja);
    for (std::size_t b = 0; b < cells; ++b) {
      if (a == b) continue;
      const int jb = period_of[b];
      const double eb = probs.marginal(jb);
      const bool same = cluster_of[a] == cluster_of[b];
      var1 += (probs.pair(1, ja, 1, jb, same) - ea * eb) / (ea * eb) * t1[a] * t1[b];
      var0 += (probs.pair(0, ja, 0, jb, same) - (1.0 - ea) * (1.0 - eb)) /
              ((1.0 - ea) * (1.0 - eb)) * t0[a] * t0[b];
      cov += (probs.pair(1, ja, 0, jb, same) - ea * (1.0 - eb)) / (ea * (1.0 - eb)) * t1[a] *
             t0[b];
    }
  }

  const double inv_n2 = 1.0 / (static_cast<double>(n_total) * static_cast<double>(n_total));
  ExactMoments out;
  out.mean = mean / static_cast<double>(n_total);
  out.var_treated = var1 * inv_n2;
  out.var_control = var0 * inv_n2;
  out.covariance = cov * inv_n2;
  out.variance = out.var_treated + out.var_control - 2.0 * out.covariance;
  return out;
}

double CltGrid::realized(const std::vector<int>& positions) const {
  if (static_cast<Eigen::Index>(positions.size()) != c.rows())
    throw std::invalid_argument("position vector length does not match cluster count");
  double total = 0.0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    const int l = positions[static_cast<std::size_t>(i)];
    if (l < 0 || l >= c.cols()) throw std::out_of_range("line position out of range");
    total += c(i, l);
  }
  return total;
}

CltGrid build_clt_grid(const PotentialOutcomeTable& table, double lambda0) {
  const StepWedgeDesign& dz = table.design();
  const int I = dz.clusters;
  const int J = dz.rollout_periods;

  std::vector<double> e(static_cast<std::size_t>(J + 1), 0.0);
  for (int j = 1; j <= J; ++j) e[static_cast<std::size_t>(j)] = propensity(dz, j);

  std::vector<double> t1(static_cast<std::size_t>(I) * static_cast<std::size_t>(J), 0.0);
  std::vector<double> t0(t1.size(), 0.0);
  long long n_total = 0;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const int j = table.period(r);
    if (j < 1 || j > J) continue;
    const std::size_t c = static_cast<std::size_t>(table.cluster_index(r)) *
                              static_cast<std::size_t>(J) +
                          static_cast<std::size_t>(j - 1);
    t1[c] += table.y1(r) - lambda0 * table.d1(r);
    t0[c] += table.y0(r) - lambda0 * table.d0(r);
    ++n_total;
  }
  if (n_total == 0) throw std::runtime_error("potential-outcome table has no rollout rows");
  const double inv_n = 1.0 / static_cast<double>(n_total);

  CltGrid grid;
  grid.c = Eigen::MatrixXd::Zero(I, I);
  for (int l = 0; l < I; ++l) {
    const int pl = position_adoption_time(dz, l);  // in 1 .. J+1
    for (int i = 0; i < I; ++i) {
      double v = 0.0;
      for (int j = pl; j <= J; ++j)
        v += t1[static_cast<std::size_t>(i) * static_cast<std::size_t>(J) +
                static_cast<std::size_t>(j - 1)] /
             e[static_cast<std::size_t>(j)];
      for (int j = 1; j < pl; ++j)
        v -= t0[static_cast<std::size_t>(i) * static_cast<std::size_t>(J) +
                static_cast<std::size_t>(j - 1)] /
             (1.0 - e[static_cast<std::size_t>(j)]);
      grid.c(i, l) = inv_n * v;
    }
  }
  grid.row_means = grid.c.rowwise().mean();
  grid.col_means = grid.c.colwise().mean().transpose();
  grid.overall_mean = grid.row_means.sum();
  return grid;
}

}  // namespace swedge
