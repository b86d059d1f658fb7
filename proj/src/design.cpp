// SPDX-License-Identifier: MIT

#include "swedge/design.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace swedge {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

StepWedgeDesign StepWedgeDesign::one_at_a_time(int rollout_periods) {
  StepWedgeDesign d;
  d.clusters = rollout_periods + 1;
  d.rollout_periods = rollout_periods;
  d.cumulative_treated.resize(static_cast<std::size_t>(rollout_periods));
  std::iota(d.cumulative_treated.begin(), d.cumulative_treated.end(), 1);
  d.validate();
  return d;
}

void StepWedgeDesign::validate() const {
  if (clusters < 2) fail("design needs at least 2 clusters, got " + std::to_string(clusters));
  if (rollout_periods < 1) {
    fail("design needs at least 1 rollout period, got " + std::to_string(rollout_periods));
  }
  if (static_cast<int>(cumulative_treated.size()) != rollout_periods) {
    fail("cumulative_treated must list one count per rollout period (expected " +
         std::to_string(rollout_periods) + ", got " +
         std::to_string(cumulative_treated.size()) + ")");
  }
  int prev = 0;
  for (int j = 1; j <= rollout_periods; ++j) {
    const int ij = cumulative_treated[static_cast<std::size_t>(j - 1)];
    if (j == 1 && ij < 1) fail("I_1 must be positive (no all-control rollout start)");
    if (ij < prev) {
      fail("cumulative treated counts must be nondecreasing; I_" + std::to_string(j) + " = " +
           std::to_string(ij) + " < I_" + std::to_string(j - 1) + " = " + std::to_string(prev));
    }
    prev = ij;
  }
  if (prev >= clusters) {
    fail("I_J must stay below I so the last rollout period has a control cluster (I_J = " +
         std::to_string(prev) + ", I = " + std::to_string(clusters) + ")");
  }
}

int StepWedgeDesign::treated_by(int period) const {
  if (period <= 0) return 0;
  if (period > rollout_periods) return clusters;
  return cumulative_treated[static_cast<std::size_t>(period - 1)];
}

Rational propensity_exact(const StepWedgeDesign& design, int period) {
  if (period < 1 || period > design.rollout_periods) {
    throw std::domain_error("propensity is defined for rollout periods 1.." +
                            std::to_string(design.rollout_periods) + ", got " +
                            std::to_string(period));
  }
  return Rational(design.treated_by(period), design.clusters);
}

double propensity(const StepWedgeDesign& design, int period) {
  return propensity_exact(design, period).to_double();
}

void AssignmentRealization::validate_against(const StepWedgeDesign& design) const {
  if (static_cast<int>(adoption.size()) != design.clusters) {
    fail("assignment lists " + std::to_string(adoption.size()) + " clusters but design has " +
         std::to_string(design.clusters));
  }
  if (rollout_periods != design.rollout_periods) {
    fail("assignment rollout length does not match design");
  }
  std::vector<int> count(static_cast<std::size_t>(design.post_period()) + 1, 0);
  for (std::size_t i = 0; i < adoption.size(); ++i) {
    const int a = adoption[i];
    if (a < 1 || a > design.post_period()) {
      fail("cluster " + std::to_string(i) + " has adoption time " + std::to_string(a) +
           " outside 1.." + std::to_string(design.post_period()));
    }
    ++count[static_cast<std::size_t>(a)];
  }
  int cum = 0;
  for (int t = 1; t <= design.post_period(); ++t) {
    cum += count[static_cast<std::size_t>(t)];
    const int expected = design.treated_by(t);
    if (cum != expected) {
      fail("assignment has " + std::to_string(cum) + " clusters adopted by period " +
           std::to_string(t) + " but design requires " + std::to_string(expected));
    }
  }
}

int position_adoption_time(const StepWedgeDesign& design, int position) {
  for (int t = 1; t <= design.post_period(); ++t) {
    if (position < design.treated_by(t)) return t;
  }
  fail("line position " + std::to_string(position) + " outside 0..I-1");
}

std::vector<int> sample_positions(const StepWedgeDesign& design, Rng& rng) {
  std::vector<int> positions(static_cast<std::size_t>(design.clusters));
  std::iota(positions.begin(), positions.end(), 0);
  rng.shuffle(positions);
  return positions;
}

AssignmentRealization realization_from_positions(const StepWedgeDesign& design,
                                                 const std::vector<int>& positions) {
  AssignmentRealization r;
  r.rollout_periods = design.rollout_periods;
  r.adoption.resize(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    r.adoption[i] = position_adoption_time(design, positions[i]);
  }
  r.validate_against(design);
  return r;
}

AssignmentRealization sample_assignment(const StepWedgeDesign& design, Rng& rng) {
  return realization_from_positions(design, sample_positions(design, rng));
}

EnumerationCount enumeration_count(const StepWedgeDesign& design) {
  // Multinomial coefficient I! / prod_t m_t!, built as a product of binomials
  // so intermediate values stay integral. Saturates on 64-bit overflow.
  unsigned __int128 total = 1;
  int remaining = design.clusters;
  for (int t = 1; t <= design.post_period(); ++t) {
    const int m = design.adopters_at(t);
    // C(remaining, m)
    unsigned __int128 binom = 1;
    for (int s = 1; s <= m; ++s) {
      binom = binom * static_cast<unsigned>(remaining - m + s) / static_cast<unsigned>(s);
    }
    total *= binom;
    remaining -= m;
    if (total > static_cast<unsigned __int128>(UINT64_MAX)) {
      return {false, UINT64_MAX};
    }
  }
  return {true, static_cast<std::uint64_t>(total)};
}

std::vector<AssignmentRealization> enumerate_assignments(const StepWedgeDesign& design,
                                                         std::uint64_t cap) {
  design.validate();
  const EnumerationCount count = enumeration_count(design);
  if (!count.exact || count.value > cap) {
    const std::string shown =
        count.exact ? std::to_string(count.value) : std::string("more than 2^64");
    throw std::invalid_argument("design has " + shown +
                                " distinct assignments, too large to enumerate (cap " +
                                std::to_string(cap) + ")");
  }
  // The sorted adoption vector is the lexicographically smallest arrangement;
  // std::next_permutation then walks every distinct multiset permutation.
  std::vector<int> adoption;
  adoption.reserve(static_cast<std::size_t>(design.clusters));
  for (int t = 1; t <= design.post_period(); ++t) {
    for (int m = 0; m < design.adopters_at(t); ++m) adoption.push_back(t);
  }
  std::vector<AssignmentRealization> out;
  out.reserve(count.value);
  do {
    AssignmentRealization r;
    r.adoption = adoption;
    r.rollout_periods = design.rollout_periods;
    out.push_back(std::move(r));
  } while (std::next_permutation(adoption.begin(), adoption.end()));
  return out;
}

namespace {

// Feasible adoption-time window [lo, hi] for one cluster, 1-based inclusive.
struct Window {
  int lo = 1;
  int hi = 0;
};

// Collapses conditions to per-cluster windows. Returns std::nullopt when some
// cluster's conditions are contradictory (probability exactly zero).
std::optional<std::vector<Window>> reduce_to_windows(
    const StepWedgeDesign& design, const std::vector<CellCondition>& conditions) {
  struct Bounds {
    int cluster;
    int lo;
    int hi;
  };
  std::vector<Bounds> per_cluster;
  for (const CellCondition& c : conditions) {
    if (c.period < 0 || c.period > design.post_period()) {
      fail("condition period " + std::to_string(c.period) + " outside 0.." +
           std::to_string(design.post_period()));
    }
    if (c.z != 0 && c.z != 1) fail("condition z must be 0 or 1");
    // Boundary periods are deterministic: control before rollout, treated
    // after. A matching condition is vacuous, a conflicting one impossible.
    int lo = 1;
    int hi = design.post_period();
    if (c.z == 1) {
      if (c.period == 0) return std::nullopt;
      hi = c.period;  // adopted by this period
    } else {
      if (c.period == design.post_period()) return std::nullopt;
      lo = c.period + 1;  // not yet adopted
    }
    auto it = std::find_if(per_cluster.begin(), per_cluster.end(),
                           [&](const Bounds& b) { return b.cluster == c.cluster; });
    if (it == per_cluster.end()) {
      per_cluster.push_back({c.cluster, lo, hi});
    } else {
      it->lo = std::max(it->lo, lo);
      it->hi = std::min(it->hi, hi);
    }
  }
  std::vector<Window> windows;
  for (const Bounds& b : per_cluster) {
    if (b.lo > b.hi) return std::nullopt;
    if (b.lo == 1 && b.hi == design.post_period()) continue;  // vacuous
    windows.push_back({b.lo, b.hi});
  }
  return windows;
}

// Exact probability that k (<= 4) distinct clusters have adoption times in
// their respective windows. Adoption times are sampled without replacement
// from slots with multiplicities m_t, so
//   P = sum over (t_1..t_k), t_r in W_r, of
//         m_{t_1} (m_{t_2} - [t_2=t_1]) (m_{t_3} - [t_3=t_1] - [t_3=t_2]) ...
//       / ( I (I-1) ... (I-k+1) ).
// Each summand is one sequenced product of depleted slot counts; the grand
// sum expands to exactly the tabulated pattern formulas.
Rational window_probability(const StepWedgeDesign& design, const std::vector<Window>& windows) {
  const std::size_t k = windows.size();
  __int128 numerator = 0;

  // Iterate the k-fold product space of window members.
  std::vector<int> cursor(k);
  for (std::size_t r = 0; r < k; ++r) cursor[r] = windows[r].lo;
  while (true) {
    long long term = 1;
    for (std::size_t r = 0; r < k && term != 0; ++r) {
      int depletion = 0;
      for (std::size_t s = 0; s < r; ++s) depletion += (cursor[s] == cursor[r]) ? 1 : 0;
      term *= design.adopters_at(cursor[r]) - depletion;
    }
    numerator += term;  // a depleted-out slot zeroes the whole product
    // Advance odometer.
    std::size_t r = 0;
    while (r < k && ++cursor[r] > windows[r].hi) {
      cursor[r] = windows[r].lo;
      ++r;
    }
    if (r == k) break;
  }
  if (numerator > INT64_MAX) throw std::overflow_error("joint probability numerator overflow");

  long long denominator = 1;
  for (std::size_t r = 0; r < k; ++r) denominator *= design.clusters - static_cast<int>(r);
  return Rational(static_cast<std::int64_t>(numerator), denominator);
}

Rational enumeration_probability(const StepWedgeDesign& design,
                                 const std::vector<CellCondition>& conditions,
                                 std::uint64_t cap) {
  const EnumerationCount count = enumeration_count(design);
  if (!count.exact || count.value > cap) {
    const std::string shown =
        count.exact ? std::to_string(count.value) : std::string("more than 2^64");
    throw std::invalid_argument(
        "joint probability involves more than 4 clusters and has no closed form; "
        "the design's " +
        shown + " assignments exceed the enumeration cap of " + std::to_string(cap));
  }
  std::int64_t hits = 0;
  for (const AssignmentRealization& r : enumerate_assignments(design, cap)) {
    bool ok = true;
    for (const CellCondition& c : conditions) {
      if (r.z(c.cluster, c.period) != c.z) {
        ok = false;
        break;
      }
    }
    if (ok) ++hits;
  }
  return Rational(hits, static_cast<std::int64_t>(count.value));
}

}  // namespace

Rational joint_probability(const StepWedgeDesign& design,
                           const std::vector<CellCondition>& conditions,
                           std::uint64_t enumeration_cap) {
  design.validate();
  const auto windows = reduce_to_windows(design, conditions);
  if (!windows.has_value()) return Rational(0);
  if (windows->size() <= 4) return window_probability(design, *windows);
  return enumeration_probability(design, conditions, enumeration_cap);
}

StepWedgeDesign design_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("design JSON is malformed: ") + e.what());
  }
  StepWedgeDesign d;
  if (j.value("one_at_a_time", false)) {
    int rollout = 0;
    if (j.contains("J")) {
      rollout = j.at("J").get<int>();
    } else if (j.contains("I")) {
      rollout = j.at("I").get<int>() - 1;
    } else {
      fail("one_at_a_time design needs J (or I) to fix its size");
    }
    d = StepWedgeDesign::one_at_a_time(rollout);
    if (j.contains("I") && j.at("I").get<int>() != d.clusters) {
      fail("one_at_a_time design requires I = J + 1");
    }
    return d;
  }
  for (const char* key : {"I", "J", "cumulative_treated"}) {
    if (!j.contains(key)) fail(std::string("design JSON is missing \"") + key + "\"");
  }
  d.clusters = j.at("I").get<int>();
  d.rollout_periods = j.at("J").get<int>();
  d.cumulative_treated = j.at("cumulative_treated").get<std::vector<int>>();
  d.validate();
  return d;
}

std::string design_to_json_text(const StepWedgeDesign& design) {
  json j;
  j["I"] = design.clusters;
  j["J"] = design.rollout_periods;
  j["cumulative_treated"] = design.cumulative_treated;
  return j.dump(2) + "\n";
}

StepWedgeDesign load_design_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open design file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return design_from_json_text(buf.str());
}

}  // namespace swedge
