// SPDX-License-Identifier: MIT

#include "swedge/ht.hpp"

#include <doctest.h>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "swedge/dataset.hpp"
#include "swedge/design.hpp"
#include "swedge/fieller.hpp"
#include "swedge/rng.hpp"

using swedge::AdjustmentModel;
using swedge::AssignmentRealization;
using swedge::CltGrid;
using swedge::ExactMoments;
using swedge::HtAdjustment;
using swedge::HtAnalysis;
using swedge::HtSpec;
using swedge::HtVarianceKind;
using swedge::IntervalSet;
using swedge::PairProbabilities;
using swedge::PotentialOutcomeTable;
using swedge::Rng;
using swedge::StepWedgeDesign;
using swedge::TrialDataset;

namespace {

StepWedgeDesign make_design(int clusters, std::vector<int> cumulative) {
  StepWedgeDesign d;
  d.clusters = clusters;
  d.rollout_periods = static_cast<int>(cumulative.size());
  d.cumulative_treated = std::move(cumulative);
  d.validate();
  return d;
}

// A potential-outcome table with one to three rows per cell across all
// periods (bookends included) and a guaranteed complier in every period.
PotentialOutcomeTable random_table(const StepWedgeDesign& d, std::uint64_t seed,
                                   int covariates = 0) {
  PotentialOutcomeTable table(d, covariates);
  Rng rng(seed, 0, 0);
  for (int i = 0; i < d.clusters; ++i)
    for (int j = 0; j <= d.post_period(); ++j) {
      const int rows = 1 + static_cast<int>(rng.uniform_int(3));
      for (int k = 0; k < rows; ++k) {
        const double y0 = rng.normal(0.0, 1.0) + 0.3 * j;
        const double y1 = y0 + rng.normal(0.5, 0.8);
        int d1 = 1;
        int d0 = 0;
        if (!(i == 0 && k == 0)) {
          const double u = rng.u01();
          if (u < 0.3) {
            d1 = d0 = 1;  // always-taker
          } else if (u < 0.55) {
            d1 = d0 = 0;  // never-taker
          }
        }
        std::vector<double> x(static_cast<std::size_t>(covariates));
        for (double& v : x) v = rng.normal();
        // The exclusion restriction ties y to d, not to the assignment.
        const double yy1 = d1 == d0 ? y0 : y1;
        table.append(i, j, yy1, y0, d1, d0, x.empty() ? nullptr : x.data());
      }
    }
  table.validate();
  return table;
}

double enumeration_mean(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double enumeration_variance(const std::vector<double>& values) {
  const double mean = enumeration_mean(values);
  double sum = 0.0;
  for (double v : values) sum += (v - mean) * (v - mean);
  return sum / static_cast<double>(values.size());
}

}  // namespace

TEST_CASE("point estimate matches the inverse-propensity formula by hand") {
  const StepWedgeDesign d = make_design(3, {1, 2});
  TrialDataset data(d, 0);
  // Adoption times 1, 2, 3; one row per cell. Rows: cluster, period, z, d, y.
  const int z[3][4] = {{0, 1, 1, 1}, {0, 0, 1, 1}, {0, 0, 0, 1}};
  const double y[3][4] = {{9, 2, 3, 9}, {9, 1, 5, 9}, {9, 4, 6, 9}};
  const int dd[3][4] = {{0, 1, 1, 1}, {0, 0, 1, 1}, {1, 1, 0, 1}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= 3; ++j) data.append(i, j, z[i][j], dd[i][j], y[i][j], nullptr);
  data.finalize();

  const HtAnalysis ht(data, HtSpec{});
  // e_1 = 1/3 and e_2 = 2/3, so treated cells weigh 3 or 3/2 and control
  // cells 3/2 or 3, over N = 6 rollout individuals.
  CHECK(std::abs(ht.tau_y() - (-1.25)) < 1e-12);
  CHECK(std::abs(ht.tau_d() - 0.75) < 1e-12);
  CHECK(std::abs(ht.lambda_hat() - (-5.0 / 3.0)) < 1e-12);
  CHECK(std::abs(ht.tau(2.0) - (-2.75)) < 1e-12);
}

TEST_CASE("proportional outcomes zero the estimator at the true ratio") {
  const StepWedgeDesign d = make_design(4, {2, 3});
  const double lambda = 1.4;
  PotentialOutcomeTable table(d, 0);
  Rng rng(101, 0, 0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= 3; ++j)
      for (int k = 0; k < 2; ++k) {
        const int d1 = rng.bernoulli(0.7) ? 1 : 0;
        const int d0 = d1 == 1 && rng.bernoulli(0.4) ? 1 : 0;
        const double base = rng.normal();
        // y(z) = lambda * d(z) + base makes every residual y - lambda d
        // assignment free, so tau(lambda) vanishes for every realization.
        table.append(i, j, lambda * d1 + base, lambda * d0 + base, d1, d0, nullptr);
      }
  table.validate();
  for (const AssignmentRealization& a : enumerate_assignments(d)) {
    const HtAnalysis ht(table.materialize(a), HtSpec{});
    CHECK(std::abs(ht.tau(lambda)) < 1e-12);
  }
}

TEST_CASE("estimator and variance are affine and quadratic in lambda") {
  const StepWedgeDesign d = make_design(5, {2, 3});
  const PotentialOutcomeTable table = random_table(d, 7);
  Rng rng(8, 0, 0);
  const TrialDataset data = table.materialize(sample_assignment(d, rng));
  const HtAnalysis ht(data, HtSpec{});

  for (double lambda0 : {-1.5, 0.0, 0.9}) {
    TrialDataset shifted(d, 0);
    for (std::size_t r = 0; r < data.rows(); ++r)
      shifted.append(data.cluster_id(r), data.period(r), data.z(r), data.d(r),
                     data.y(r) - lambda0 * data.d(r), nullptr);
    shifted.finalize();
    const HtAnalysis refit(shifted, HtSpec{});
    CHECK(std::abs(refit.tau_y() - ht.tau(lambda0)) < 1e-12);
    for (HtVarianceKind kind : {HtVarianceKind::Conservative, HtVarianceKind::Simplified}) {
      const double direct = ht.variance_quadratic(kind).at(lambda0);
      const double refitted = refit.variance_quadratic(kind).q0;
      CHECK(std::abs(direct - refitted) < 1e-10 * (1.0 + std::abs(direct)));
    }
  }
}

TEST_CASE("enumeration mean of the estimator is the residualized estimand") {
  const std::vector<StepWedgeDesign> designs = {make_design(4, {2, 3}),
                                                make_design(4, {1, 2, 3})};
  for (const StepWedgeDesign& d : designs)
    for (std::uint64_t seed : {21u, 22u, 23u}) {
      const PotentialOutcomeTable table = random_table(d, seed);
      const auto truth = swedge::true_estimands(table);
      for (double lambda0 : {0.0, 0.7}) {
        const double target = truth.tau - lambda0 * truth.compliance_rate;
        std::vector<double> estimates;
        for (const AssignmentRealization& a : enumerate_assignments(d))
          estimates.push_back(HtAnalysis(table.materialize(a), HtSpec{}).tau(lambda0));
        CHECK(std::abs(enumeration_mean(estimates) - target) < 1e-12);
      }
    }
}

TEST_CASE("closed-form moments equal enumeration moments") {
  const std::vector<StepWedgeDesign> designs = {make_design(4, {2, 3}),
                                                make_design(4, {1, 2, 3})};
  for (const StepWedgeDesign& d : designs)
    for (std::uint64_t seed : {31u, 32u}) {
      const PotentialOutcomeTable table = random_table(d, seed);
      const double lambda0 = 0.4;
      const ExactMoments moments = swedge::exact_moments(table, lambda0);

      std::vector<double> estimates;
      std::vector<double> treated_halves;
      std::vector<double> control_halves;
      const PairProbabilities probs(d);
      long long n = 0;
      for (std::size_t r = 0; r < table.rows(); ++r) {
        const int j = table.period(r);
        if (j >= 1 && j <= d.rollout_periods) ++n;
      }
      for (const AssignmentRealization& a : enumerate_assignments(d)) {
        const TrialDataset data = table.materialize(a);
        estimates.push_back(HtAnalysis(data, HtSpec{}).tau(lambda0));
        // Arm-specific halves, accumulated directly from cell totals.
        double t1 = 0.0;
        double t0 = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) {
          const int j = data.period(r);
          if (j < 1 || j > d.rollout_periods) continue;
          const double resid = data.y(r) - lambda0 * data.d(r);
          const double e = probs.marginal(j);
          if (data.z(r) == 1)
            t1 += resid / e;
          else
            t0 += resid / (1.0 - e);
        }
        treated_halves.push_back(t1 / static_cast<double>(n));
        control_halves.push_back(t0 / static_cast<double>(n));
      }
      CHECK(std::abs(moments.mean - enumeration_mean(estimates)) < 1e-12);
      CHECK(std::abs(moments.variance - enumeration_variance(estimates)) < 1e-12);
      CHECK(std::abs(moments.var_treated - enumeration_variance(treated_halves)) < 1e-12);
      CHECK(std::abs(moments.var_control - enumeration_variance(control_halves)) < 1e-12);
      CHECK(std::abs(moments.variance - (moments.var_treated + moments.var_control -
                                         2.0 * moments.covariance)) < 1e-12);
    }
}

TEST_CASE("conservative variance upper-bounds the truth in expectation") {
  const std::vector<StepWedgeDesign> designs = {make_design(4, {2, 3}),
                                                make_design(4, {1, 2, 3})};
  for (const StepWedgeDesign& d : designs)
    for (std::uint64_t seed : {41u, 42u, 43u}) {
      const PotentialOutcomeTable table = random_table(d, seed);
      const double lambda0 = 0.25;
      const ExactMoments moments = swedge::exact_moments(table, lambda0);
      double mean_conservative = 0.0;
      double mean_simplified = 0.0;
      const auto assignments = enumerate_assignments(d);
      for (const AssignmentRealization& a : assignments) {
        const HtAnalysis ht(table.materialize(a), HtSpec{});
        const double cons = ht.variance_quadratic(HtVarianceKind::Conservative).at(lambda0);
        const double simp = ht.variance_quadratic(HtVarianceKind::Simplified).at(lambda0);
        // The correction terms are sums of squares, so they can only add.
        CHECK(cons >= simp - 1e-12);
        mean_conservative += cons;
        mean_simplified += simp;
      }
      mean_conservative /= static_cast<double>(assignments.size());
      mean_simplified /= static_cast<double>(assignments.size());
      CHECK(mean_conservative >= moments.variance - 1e-12);
    }
}

TEST_CASE("position grid reproduces the estimand and every realization") {
  const StepWedgeDesign d = make_design(5, {1, 2, 3, 4});
  const PotentialOutcomeTable table = random_table(d, 57);
  const double lambda0 = 0.3;
  const CltGrid grid = swedge::build_clt_grid(table, lambda0);

  const auto truth = swedge::true_estimands(table);
  const double target = truth.tau - lambda0 * truth.compliance_rate;
  CHECK(std::abs(grid.overall_mean - target) < 1e-12);

  double row_total = 0.0;
  double col_total = 0.0;
  for (int i = 0; i < d.clusters; ++i) {
    row_total += grid.row_means[i];
    col_total += grid.col_means[i];
  }
  CHECK(std::abs(row_total - grid.overall_mean) < 1e-12);
  CHECK(std::abs(col_total - grid.overall_mean) < 1e-12);

  Rng rng(58, 0, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const std::vector<int> positions = swedge::sample_positions(d, rng);
    const AssignmentRealization a = swedge::realization_from_positions(d, positions);
    const HtAnalysis ht(table.materialize(a), HtSpec{});
    CHECK(std::abs(grid.realized(positions) - ht.tau(lambda0)) < 1e-12);
  }
}

TEST_CASE("prepost adjustment keeps the estimator enumeration unbiased") {
  const StepWedgeDesign d = make_design(4, {2, 3});
  const PotentialOutcomeTable table = random_table(d, 61, 2);
  const auto truth = swedge::true_estimands(table);
  HtSpec spec;
  spec.adjustment = HtAdjustment::PrePostRollout;
  for (double lambda0 : {0.0, 0.5}) {
    const double target = truth.tau - lambda0 * truth.compliance_rate;
    std::vector<double> estimates;
    for (const AssignmentRealization& a : enumerate_assignments(d))
      estimates.push_back(HtAnalysis(table.materialize(a), spec).tau(lambda0));
    CHECK(std::abs(enumeration_mean(estimates) - target) < 1e-10);
  }
}

TEST_CASE("a perfect linear fit removes the variance entirely") {
  const StepWedgeDesign d = make_design(4, {2, 3});
  PotentialOutcomeTable table(d, 1);
  Rng rng(67, 0, 0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= 3; ++j)
      for (int k = 0; k < 2; ++k) {
        const double x = rng.normal();
        // Outcomes exactly linear in x within each arm, full compliance.
        table.append(i, j, 2.0 + 0.5 * x, 1.0 + 0.5 * x, 1, 0, &x);
      }
  table.validate();
  HtSpec adjusted;
  adjusted.adjustment = HtAdjustment::PrePostRollout;
  for (const AssignmentRealization& a : enumerate_assignments(d)) {
    const TrialDataset data = table.materialize(a);
    const HtAnalysis plain(data, HtSpec{});
    const HtAnalysis adj(data, adjusted);
    const double v_plain = plain.variance_quadratic(HtVarianceKind::Conservative).at(0.0);
    const double v_adj = adj.variance_quadratic(HtVarianceKind::Conservative).at(0.0);
    CHECK(v_adj < 1e-18);
    CHECK(v_adj <= v_plain + 1e-18);
    CHECK(std::abs(adj.tau(1.0)) < 1e-12);  // exact effect 1 at full compliance
  }
}

TEST_CASE("declined tests report a diagnostic instead of a result") {
  const auto outcome = swedge::ht_deviate_test(0.5, 1.0, -0.25);
  CHECK(outcome.declined);
  CHECK(outcome.diagnostic.find("declined") != std::string::npos);
  CHECK(outcome.diagnostic.find("-0.25") != std::string::npos);

  const auto fine = swedge::ht_deviate_test(0.5, 1.0, 0.25);
  CHECK_FALSE(fine.declined);
  CHECK(fine.result.deviate == 2.0);
  CHECK(std::isinf(fine.result.df));
}

TEST_CASE("interval inversion agrees with pointwise tests") {
  const StepWedgeDesign d = make_design(6, {2, 3, 4});
  const PotentialOutcomeTable table = random_table(d, 71);
  Rng rng(72, 0, 0);
  const TrialDataset data = table.materialize(sample_assignment(d, rng));
  for (HtVarianceKind kind : {HtVarianceKind::Conservative, HtVarianceKind::Simplified}) {
    HtSpec spec;
    spec.variance = kind;
    const HtAnalysis ht(data, spec);
    const IntervalSet set = ht.invert_ci(0.05);
    const double center = ht.lambda_hat();
    const double halfwidth =
        10.0 * std::sqrt(ht.variance_quadratic().at(center)) / std::abs(ht.tau_d());
    for (int g = 0; g <= 200; ++g) {
      const double lambda0 = center - halfwidth + 2.0 * halfwidth * g / 200.0;
      const auto outcome = ht.test(lambda0);
      if (outcome.declined) continue;
      if (std::abs(outcome.result.p_value - 0.05) < 1e-6) continue;  // boundary slop
      CHECK(set.contains(lambda0) == !outcome.result.reject(0.05));
    }
  }
}

TEST_CASE("adjustment fitting validates its inputs") {
  const StepWedgeDesign d = make_design(4, {2, 3});
  const PotentialOutcomeTable table = random_table(d, 83, 1);
  Rng rng(84, 0, 0);
  const TrialDataset data = table.materialize(sample_assignment(d, rng));

  CHECK_THROWS_AS(swedge::fit_adjustment(data, HtAdjustment::None), std::invalid_argument);

  // Remove the pre-rollout period; the control-arm fit then lacks rows.
  TrialDataset trimmed(d, 1);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    if (data.period(r) == 0) continue;
    trimmed.append(data.cluster_id(r), data.period(r), data.z(r), data.d(r), data.y(r),
                   data.x_row(r));
  }
  trimmed.finalize();
  try {
    swedge::fit_adjustment(trimmed, HtAdjustment::PrePostRollout);
    FAIL("expected the control-arm fit to be short of rows");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("control arm") != std::string::npos);
  }

  // A constant covariate cannot be separated from the intercept.
  TrialDataset flat(d, 1);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const double x = 1.0;
    flat.append(data.cluster_id(r), data.period(r), data.z(r), data.d(r), data.y(r), &x);
  }
  flat.finalize();
  try {
    swedge::fit_adjustment(flat, HtAdjustment::PrePostRollout);
    FAIL("expected a rank-deficiency error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("rank deficient") != std::string::npos);
  }
}

TEST_CASE("analyze wrapper carries labels and the gaussian reference") {
  const StepWedgeDesign d = make_design(6, {2, 3, 4});
  const PotentialOutcomeTable table = random_table(d, 91, 2);
  Rng rng(92, 0, 0);
  const TrialDataset data = table.materialize(sample_assignment(d, rng));

  HtSpec spec;
  spec.adjustment = HtAdjustment::PrePostRollout;
  spec.variance = HtVarianceKind::Simplified;
  const auto result = swedge::ht_analyze(data, spec, 0.05);
  CHECK(result.estimator == "ht-adj-prepost");
  CHECK(result.variance == "ht-simplified");
  CHECK(std::isinf(result.df));

  const HtAnalysis ht(data, spec);
  CHECK(result.lambda_hat == ht.lambda_hat());
  CHECK(result.tau_at_0 == ht.tau(0.0));
  CHECK(result.interval.describe() == ht.invert_ci(0.05).describe());
}

TEST_CASE("pair probabilities mirror the exact design probabilities") {
  const StepWedgeDesign d = make_design(5, {1, 2, 3, 4});
  const PairProbabilities probs(d);
  using swedge::CellCondition;
  CHECK(probs.marginal(2) == doctest::Approx(0.4).epsilon(1e-12));
  const double p11 =
      swedge::joint_probability(d, {CellCondition{0, 1, 1}, CellCondition{1, 2, 1}}).to_double();
  CHECK(probs.pair(1, 1, 1, 2, false) == doctest::Approx(p11).epsilon(1e-12));
  CHECK(probs.is_zero(1, 1, 1, 1, false));   // two treated clusters in period 1
  CHECK(probs.is_zero(0, 4, 0, 4, false));   // two control clusters in period 4
  CHECK(probs.is_zero(1, 2, 0, 3, true));    // no cluster reverts to control
  CHECK_FALSE(probs.is_zero(1, 2, 0, 3, false));
}
