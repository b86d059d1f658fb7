// SPDX-License-Identifier: MIT
// Stepped-wedge designs: cumulative rollout schedules, assignment
// realizations, exact assignment probabilities, sampling, and enumeration.
//
// Conventions used throughout the library:
//   * Periods are indexed 0 .. J+1. Period 0 is pre-rollout (everyone
//     control) and period J+1 is post-rollout (everyone treated); periods
//     1 .. J are the rollout periods where assignment varies.
//   * The design is summarized by cumulative treated counts I_1 <= ... <= I_J
//     with 0 < I_1 and I_J < I. Exactly I_t - I_{t-1} clusters adopt at time
//     t, for adoption times t in 1 .. J+1 (I_{J+1} = I).
//   * A realized assignment is a uniform draw from all distinct ways of
//     assigning clusters to adoption times with those multiplicities.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swedge/rational.hpp"
#include "swedge/rng.hpp"

namespace swedge {

struct StepWedgeDesign {
  int clusters = 0;                     // I
  int rollout_periods = 0;              // J
  std::vector<int> cumulative_treated;  // I_1 .. I_J

  // Schedule where exactly one cluster adopts per rollout period
  // (I_j = j, I = J + 1).
  static StepWedgeDesign one_at_a_time(int rollout_periods);

  // Throws std::invalid_argument with a precise message when the schedule is
  // not a valid stepped wedge.
  void validate() const;

  int total_periods() const { return rollout_periods + 2; }
  int post_period() const { return rollout_periods + 1; }

  // Cumulative treated count by period j, for j in 0 .. J+1.
  int treated_by(int period) const;
  // Number of clusters adopting exactly at time t, for t in 1 .. J+1.
  int adopters_at(int time) const { return treated_by(time) - treated_by(time - 1); }

  bool operator==(const StepWedgeDesign&) const = default;
};

// Marginal treatment probability e_j = I_j / I for a rollout period.
// Throws std::domain_error outside 1 .. J.
Rational propensity_exact(const StepWedgeDesign& design, int period);
double propensity(const StepWedgeDesign& design, int period);

// One realized assignment: adoption times A_i in 1 .. J+1 per cluster.
struct AssignmentRealization {
  std::vector<int> adoption;  // size I
  int rollout_periods = 0;

  // Treatment indicator z(i, j) for any period 0 .. J+1.
  int z(int cluster, int period) const {
    if (period <= 0) return 0;
    if (period > rollout_periods) return 1;
    return adoption[static_cast<std::size_t>(cluster)] <= period ? 1 : 0;
  }

  // Throws if the adoption multiset does not match the design's schedule.
  void validate_against(const StepWedgeDesign& design) const;

  bool operator==(const AssignmentRealization&) const = default;
};

// Uniform draw over assignments. The permutation variant also reports the
// underlying line positions (position l adopts at the time whose cumulative
// count first reaches l+1), which some identities are stated in terms of.
AssignmentRealization sample_assignment(const StepWedgeDesign& design, Rng& rng);
std::vector<int> sample_positions(const StepWedgeDesign& design, Rng& rng);
AssignmentRealization realization_from_positions(const StepWedgeDesign& design,
                                                 const std::vector<int>& positions);
// Adoption time for line position l (0-based), in 1 .. J+1.
int position_adoption_time(const StepWedgeDesign& design, int position);

// Number of distinct assignments, I! / prod_t (I_t - I_{t-1})!.
// `exact` is false when the value overflows 64 bits (far beyond any cap).
struct EnumerationCount {
  bool exact = true;
  std::uint64_t value = 0;
};
EnumerationCount enumeration_count(const StepWedgeDesign& design);

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// All distinct assignments, in lexicographic order of adoption vectors.
// Throws when the count exceeds `cap`, naming the count.
std::vector<AssignmentRealization> enumerate_assignments(
    const StepWedgeDesign& design, std::uint64_t cap = kDefaultEnumerationCap);

// One treatment-indicator condition Z_{cluster, period} = z.
struct CellCondition {
  int cluster = 0;
  int period = 0;
  int z = 0;
};

// Exact joint probability P(all conditions hold) under the design.
//
// Conditions are first reduced per cluster to an adoption-time window
// (treated at j means A <= j, control at j means A > j; contradictions give
// an exact zero). Up to four constrained clusters the probability is a
// closed-form product: adoption times are drawn without replacement from
// time slots with multiplicities I_t - I_{t-1}, so the joint mass is the
// window-restricted sum of sequentially depleted slot counts over the
// falling factorial I(I-1)...(I-k+1). This reproduces, case by case, the
// tabulated order 2-4 pattern probabilities (including tied periods and
// repeated clusters). Beyond four clusters the result falls back to exact
// enumeration when the design is enumerable and throws otherwise.
Rational joint_probability(const StepWedgeDesign& design,
                           const std::vector<CellCondition>& conditions,
                           std::uint64_t enumeration_cap = kDefaultEnumerationCap);

// JSON (de)serialization. Accepts either explicit fields
//   {"I": 11, "J": 10, "cumulative_treated": [1,...,10]}
// or the shorthand {"J": 10, "one_at_a_time": true}.
StepWedgeDesign design_from_json_text(const std::string& text);
std::string design_to_json_text(const StepWedgeDesign& design);
StepWedgeDesign load_design_file(const std::string& path);

}  // namespace swedge
