// SPDX-License-Identifier: MIT

#include "swedge/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "swedge/ancova.hpp"
#include "swedge/dataset.hpp"
#include "swedge/design.hpp"
#include "swedge/ht.hpp"
#include "swedge/report.hpp"
#include "swedge/rng.hpp"

using swedge::AncovaFlavor;
using swedge::GeneratedTrial;
using swedge::HtAdjustment;
using swedge::HtVarianceKind;
using swedge::MethodSpec;
using swedge::ReferenceDist;
using swedge::Rng;
using swedge::SandwichKind;
using swedge::SimReport;
using swedge::SimScenario;
using swedge::StepWedgeDesign;

namespace {

StepWedgeDesign make_design(int clusters, std::vector<int> cumulative) {
  StepWedgeDesign d;
  d.clusters = clusters;
  d.rollout_periods = static_cast<int>(cumulative.size());
  d.cumulative_treated = std::move(cumulative);
  d.validate();
  return d;
}

SimScenario small_scenario(bool informative, std::uint64_t seed) {
  SimScenario sc;
  sc.name = informative ? "small-inf" : "small";
  sc.design = make_design(6, {2, 4});
  sc.informative_size = informative;
  sc.n_reps = 6;
  sc.base_seed = seed;
  sc.methods = {swedge::method_from_label("ancova1.cr0.t"),
                swedge::method_from_label("ht.ht-conservative")};
  sc.validate();
  return sc;
}

// Period-wise sample means of the individual covariate, recomputed from the
// emitted table so the check does not share code with the generator.
std::vector<double> period_covariate_means(const swedge::PotentialOutcomeTable& table) {
  const int periods = table.design().total_periods();
  std::vector<double> sum(static_cast<std::size_t>(periods), 0.0);
  std::vector<long long> count(static_cast<std::size_t>(periods), 0);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    sum[static_cast<std::size_t>(table.period(r))] += table.x_row(r)[1];
    ++count[static_cast<std::size_t>(table.period(r))];
  }
  for (int j = 0; j < periods; ++j)
    sum[static_cast<std::size_t>(j)] /= static_cast<double>(count[static_cast<std::size_t>(j)]);
  return sum;
}

}  // namespace

TEST_CASE("method labels round-trip and reject unknown vocabulary") {
  const std::vector<std::string> labels = {
      "unadjusted.cr0.t",         "unadjusted.cr3.gaussian", "ancova1.cr0.gaussian",
      "ancova3.cr3.t",            "ht.ht-conservative",      "ht.ht-simplified",
      "ht-adj-prepost.ht-conservative", "ht-adj-full.ht-simplified"};
  for (const std::string& label : labels)
    CHECK(swedge::method_from_label(label).label() == label);

  // Regression methods default to the t reference.
  const MethodSpec defaulted = swedge::method_from_label("ancova3.cr3");
  CHECK(defaulted.reference == ReferenceDist::StudentT);
  CHECK(defaulted.label() == "ancova3.cr3.t");

  const MethodSpec m = swedge::method_from_label("ancova1.cr3.gaussian");
  CHECK(m.family == MethodSpec::Family::Ancova);
  CHECK(m.ancova.flavor == AncovaFlavor::AncovaI);
  CHECK(m.sandwich == SandwichKind::CR3);
  CHECK(m.reference == ReferenceDist::Gaussian);

  const MethodSpec h = swedge::method_from_label("ht-adj-prepost.ht-simplified");
  CHECK(h.family == MethodSpec::Family::Ht);
  CHECK(h.ht.adjustment == HtAdjustment::PrePostRollout);
  CHECK(h.ht.variance == HtVarianceKind::Simplified);

  for (const std::string& bad :
       {std::string("bogus.cr0.t"), std::string("ancova3"), std::string("ancova3.ht-conservative"),
        std::string("ancova3.cr3.weird"), std::string("ht.cr0"), std::string("ht"),
        std::string("ht.ht-conservative.t")})
    CHECK_THROWS_AS(swedge::method_from_label(bad), std::invalid_argument);
}

TEST_CASE("scenario JSON round-trips and validates") {
  SimScenario sc = small_scenario(true, 77);
  sc.alpha = 0.1;
  sc.compliance_intercept = -0.4;
  sc.compliance_scale = 2.0;
  const SimScenario back =
      swedge::scenario_from_json_text(swedge::scenario_to_json_text(sc), "<test>");
  CHECK(back.name == sc.name);
  CHECK(back.design.clusters == 6);
  CHECK(back.design.cumulative_treated == std::vector<int>{2, 4});
  CHECK(back.informative_size == sc.informative_size);
  CHECK(back.n_reps == sc.n_reps);
  CHECK(back.base_seed == sc.base_seed);
  CHECK(back.alpha == sc.alpha);
  CHECK(back.compliance_intercept == sc.compliance_intercept);
  CHECK(back.compliance_scale == sc.compliance_scale);
  REQUIRE(back.methods.size() == 2);
  CHECK(back.methods[0].label() == "ancova1.cr0.t");
  CHECK(back.methods[1].label() == "ht.ht-conservative");

  SimScenario dup = sc;
  dup.methods.push_back(swedge::method_from_label("ancova1.cr0.t"));
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
  SimScenario none = sc;
  none.methods.clear();
  CHECK_THROWS_AS(none.validate(), std::invalid_argument);
  SimScenario bad_alpha = sc;
  bad_alpha.alpha = 1.0;
  CHECK_THROWS_AS(bad_alpha.validate(), std::invalid_argument);

  try {
    swedge::scenario_from_json_text(R"({"design": {"I": 6, "J": 2,
        "cumulative_treated": [2, 4]}, "methods": ["nope.cr0.t"]})",
                                    "cfg.json");
    FAIL("expected an unknown-estimator error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cfg.json") != std::string::npos);
    CHECK(msg.find("nope") != std::string::npos);
  }
}

TEST_CASE("scenario files accept one object or a scenarios list") {
  const SimScenario sc = small_scenario(false, 5);
  const std::string single = "unit_sim_single.json";
  swedge::write_text_file(single, swedge::scenario_to_json_text(sc));
  const auto one = swedge::load_scenario_file(single);
  REQUIRE(one.size() == 1);
  CHECK(one[0].name == "small");

  const std::string listed = "unit_sim_list.json";
  swedge::write_text_file(listed, "{\"scenarios\": [" + swedge::scenario_to_json_text(sc) + "," +
                                      swedge::scenario_to_json_text(small_scenario(true, 6)) +
                                      "]}");
  const auto two = swedge::load_scenario_file(listed);
  REQUIRE(two.size() == 2);
  CHECK(two[1].informative_size);
  std::remove(single.c_str());
  std::remove(listed.c_str());

  CHECK_THROWS_AS(swedge::load_scenario_file("missing_file.json"), std::invalid_argument);
}

TEST_CASE("the default grid covers ten cells with the full battery") {
  const auto grid = swedge::default_grid(50, 1234);
  REQUIRE(grid.size() == 10);
  std::set<std::string> names;
  std::set<std::uint64_t> seeds;
  std::multiset<int> clusters;
  for (const SimScenario& sc : grid) {
    names.insert(sc.name);
    seeds.insert(sc.base_seed);
    clusters.insert(sc.design.clusters);
    CHECK(sc.n_reps == 50);
    CHECK(sc.methods.size() == 12);
    sc.validate();
  }
  CHECK(names.size() == 10);
  CHECK(seeds.size() == 10);
  CHECK(clusters == std::multiset<int>{11, 11, 12, 12, 30, 30, 60, 60, 90, 90});
}

TEST_CASE("generated trials are reproducible and replicate keyed") {
  const SimScenario sc = small_scenario(false, 99);
  const GeneratedTrial a = swedge::generate_trial(sc, 3);
  const GeneratedTrial b = swedge::generate_trial(sc, 3);
  CHECK(a.data.to_csv() == b.data.to_csv());
  const GeneratedTrial c = swedge::generate_trial(sc, 4);
  CHECK(a.data.to_csv() != c.data.to_csv());

  // The rollout order comes from the dedicated assignment stream.
  Rng arng(sc.base_seed, 3, 6);
  CHECK(a.data.assignment() == sample_assignment(sc.design, arng));
}

TEST_CASE("generated tables respect the outcome and compliance structure") {
  for (bool informative : {false, true}) {
    const SimScenario sc = small_scenario(informative, 2024);
    const GeneratedTrial trial = swedge::generate_trial(sc, 1);
    const auto& table = trial.table;
    const std::vector<double> xbar = period_covariate_means(table);

    std::map<std::pair<int, int>, long long> cell_rows;
    for (std::size_t r = 0; r < table.rows(); ++r)
      ++cell_rows[{table.cluster_index(r), table.period(r)}];
    const double total = static_cast<double>(table.rows());

    // Every cluster-period cell is present with a plausible head count.
    CHECK(cell_rows.size() ==
          static_cast<std::size_t>(sc.design.clusters * sc.design.total_periods()));
    for (const auto& [key, n] : cell_rows) {
      const double drift = 2.0 * std::pow(key.second + 1.0, 1.5);
      CHECK(n >= 10 + drift - 1.0);
      CHECK(n <= 90 + drift + 1.0);
    }

    long long compliers = 0;
    for (std::size_t r = 0; r < table.rows(); ++r) {
      const int d1 = table.d1(r);
      const int d0 = table.d0(r);
      CHECK(d1 >= d0);  // assignment never blocks treatment receipt
      const double x1 = table.x_row(r)[0];
      CHECK((x1 == 0.0 || x1 == 1.0));
      const double dev = table.x_row(r)[1] - xbar[static_cast<std::size_t>(table.period(r))];
      if (d1 == d0) {
        CHECK(table.y1(r) == table.y0(r));  // exclusion restriction, exact
      } else {
        ++compliers;
        const double cell_n =
            static_cast<double>(cell_rows[{table.cluster_index(r), table.period(r)}]);
        const double info =
            informative ? 2.0 * sc.design.clusters * cell_n / total : 0.0;
        const double gain = info + 0.5 * x1 + dev * dev * dev;
        CHECK(std::abs(table.y1(r) - table.y0(r) - gain) < 1e-9);
      }
    }
    const double share = static_cast<double>(compliers) / total;
    CHECK(share > 0.25);
    CHECK(share < 0.45);
  }
}

TEST_CASE("cell runs are deterministic for any worker count") {
  const SimScenario sc = small_scenario(false, 4242);
  const SimReport first = swedge::run_cell(sc);
  const SimReport second = swedge::run_cell(sc);
  const std::string once = swedge::grid_results_json_text({first});
  CHECK(once == swedge::grid_results_json_text({second}));

  setenv("SWEDGE_THREADS", "3", 1);
  const SimReport threaded = swedge::run_cell(sc);
  unsetenv("SWEDGE_THREADS");
  CHECK(once == swedge::grid_results_json_text({threaded}));

  CHECK(first.reps == sc.n_reps);
  CHECK(first.true_lambda.size() == static_cast<std::size_t>(sc.n_reps));
  CHECK(first.true_tau.size() == static_cast<std::size_t>(sc.n_reps));
  CHECK(first.compliance_rate.size() == static_cast<std::size_t>(sc.n_reps));
  double mean = 0.0;
  for (double v : first.true_lambda) mean += v;
  mean /= static_cast<double>(sc.n_reps);
  CHECK(std::abs(first.mean_true_lambda - mean) < 1e-12);
  for (double c : first.compliance_rate) {
    CHECK(c > 0.0);
    CHECK(c < 1.0);
  }

  REQUIRE(first.methods.size() == 2);
  for (const swedge::MethodTally& t : first.methods) {
    CHECK(t.reps == sc.n_reps);
    CHECK(t.decided_at_true + t.declined_at_true == t.reps);
    CHECK(t.decided_at_zero + t.declined_at_zero == t.reps);
    CHECK(t.estimates + t.estimate_errors == t.reps);
  }
}
