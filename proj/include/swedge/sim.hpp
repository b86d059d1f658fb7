// SPDX-License-Identifier: MIT
// Monte Carlo harness: synthetic stepped-wedge trials with individual-level
// noncompliance, plus a replication driver that scores estimator/variance
// pairings on bias, MSE, size, and power.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swedge/ancova.hpp"
#include "swedge/dataset.hpp"
#include "swedge/design.hpp"
#include "swedge/ht.hpp"

namespace swedge {

// One estimator/variance/reference pairing. Labels round-trip through
// method_from_label()/label() and reuse the command line vocabulary:
//   "<estimator>.<variance>[.<t|gaussian>]"
// e.g. "ancova3.cr3.t", "unadjusted.cr0.gaussian", "ht-adj-prepost.ht-conservative".
// Regression methods default to the t reference; the randomization-based
// methods always use a gaussian reference, so they take no third token.
struct MethodSpec {
  enum class Family { Ancova, Ht };

  Family family = Family::Ancova;
  AncovaSpec ancova;
  SandwichKind sandwich = SandwichKind::CR0;
  ReferenceDist reference = ReferenceDist::StudentT;
  HtSpec ht;

  std::string label() const;
};

MethodSpec method_from_label(const std::string& label);

// One simulation cell: a design, a size regime, and the methods to score.
struct SimScenario {
  std::string name;
  StepWedgeDesign design;
  bool informative_size = false;
  int n_reps = 1000;
  std::uint64_t base_seed = 0;
  double alpha = 0.05;
  // Multinomial compliance-model constants. The defaults target a complier
  // share near 30%.
  double compliance_intercept = -0.5;
  double compliance_scale = 2.5;
  std::vector<MethodSpec> methods;

  void validate() const;
};

std::string scenario_to_json_text(const SimScenario& scenario);
SimScenario scenario_from_json_text(const std::string& text, const std::string& origin);
// Accepts either a single scenario object or {"scenarios": [...]}.
std::vector<SimScenario> load_scenario_file(const std::string& path);

// The standard evaluation grid: cluster counts {12, 30, 60, 90} on a five
// period rollout plus the one-at-a-time design with eleven clusters, each
// crossed with informative and uninformative cluster size, and scored with
// the full battery of methods.
std::vector<SimScenario> default_grid(int n_reps, std::uint64_t base_seed);

// Potential outcomes for every cell of one synthetic trial together with the
// observed dataset under the sampled rollout order. Deterministic given
// (scenario.base_seed, rep_index): every random quantity comes from a
// counter-based stream keyed by the replicate and a purpose tag, so
// replicates can run on any number of threads in any order.
struct GeneratedTrial {
  PotentialOutcomeTable table;
  TrialDataset data;
};

GeneratedTrial generate_trial(const SimScenario& scenario, std::uint64_t rep_index);

// Accumulated results for one methods column within a cell. Rates are taken
// over the replicates where the method returned a decision; declined counts
// say how often it did not (singular small-sample corrections, negative
// variance estimates, inestimable ratios).
struct MethodTally {
  std::string method;
  long long reps = 0;
  long long reject_at_true = 0;
  long long decided_at_true = 0;
  long long declined_at_true = 0;
  long long reject_at_zero = 0;
  long long decided_at_zero = 0;
  long long declined_at_zero = 0;
  long long degenerate = 0;
  long long estimates = 0;
  long long estimate_errors = 0;
  double err_sum = 0.0;
  double err_sq_sum = 0.0;

  double type_i_rate() const;
  double power() const;
  double bias() const;
  double mse() const;
};

struct SimReport {
  std::string scenario;
  int reps = 0;
  double alpha = 0.05;
  // Per-replicate estimands, in replicate order.
  std::vector<double> true_lambda;
  std::vector<double> true_tau;
  std::vector<double> compliance_rate;
  double mean_true_lambda = 0.0;
  double mean_true_tau = 0.0;
  double mean_compliance = 0.0;
  std::vector<MethodTally> methods;
};

// Runs every replicate of one cell. Each method is tested at the
// replicate's true effect ratio (sizing the test) and at zero (power), and
// its point estimate feeds the bias and MSE columns. A method failing on a
// replicate increments its declined or error counters instead of aborting
// the cell. Replicates are distributed over a worker pool capped by the
// SWEDGE_THREADS environment variable; results are reduced in replicate
// order, so the report is byte-identical for any worker count.
SimReport run_cell(const SimScenario& scenario);

std::vector<SimReport> run_grid(const std::vector<SimScenario>& scenarios);

}  // namespace swedge
