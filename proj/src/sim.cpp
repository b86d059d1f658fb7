// SPDX-License-Identifier: MIT
// Synthetic trial generation and the Monte Carlo replication driver.

#include "swedge/sim.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "swedge/rng.hpp"

namespace swedge {
namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& message) { throw std::invalid_argument(message); }

// Purpose tags for the per-replicate random streams. Each random quantity in
// a generated trial has its own stream, keyed by (base_seed, replicate,
// purpose), so adding draws to one purpose never shifts another.
namespace stream {
constexpr std::uint32_t kSizes = 0;
constexpr std::uint32_t kClusterPeriodCovariate = 1;
constexpr std::uint32_t kClusterEffect = 2;
constexpr std::uint32_t kIndividualCovariate = 3;
constexpr std::uint32_t kNoise = 4;
constexpr std::uint32_t kCompliance = 5;
constexpr std::uint32_t kAssignment = 6;
}  // namespace stream

const char* flavor_token(AncovaFlavor flavor) {
  switch (flavor) {
    case AncovaFlavor::Unadjusted: return "unadjusted";
    case AncovaFlavor::AncovaI: return "ancova1";
    case AncovaFlavor::AncovaIII: return "ancova3";
  }
  fail("unknown regression flavor");
}

const char* adjustment_token(HtAdjustment adjustment) {
  switch (adjustment) {
    case HtAdjustment::None: return "ht";
    case HtAdjustment::PrePostRollout: return "ht-adj-prepost";
    case HtAdjustment::FullData: return "ht-adj-full";
  }
  fail("unknown adjustment mode");
}

std::vector<std::string> split_fields(const std::string& label) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto dot = label.find('.', start);
    fields.push_back(label.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return fields;
}

}  // namespace

std::string MethodSpec::label() const {
  if (family == Family::Ht) {
    return std::string(adjustment_token(ht.adjustment)) + "." +
           (ht.variance == HtVarianceKind::Conservative ? "ht-conservative" : "ht-simplified");
  }
  return std::string(flavor_token(ancova.flavor)) + "." +
         (sandwich == SandwichKind::CR0 ? "cr0" : "cr3") + "." +
         (reference == ReferenceDist::StudentT ? "t" : "gaussian");
}

MethodSpec method_from_label(const std::string& label) {
  const std::vector<std::string> fields = split_fields(label);
  MethodSpec spec;
  const std::string& est = fields.front();
  if (est == "unadjusted" || est == "ancova1" || est == "ancova3") {
    spec.family = MethodSpec::Family::Ancova;
    spec.ancova.flavor = est == "unadjusted"  ? AncovaFlavor::Unadjusted
                         : est == "ancova1"   ? AncovaFlavor::AncovaI
                                              : AncovaFlavor::AncovaIII;
    if (fields.size() < 2) fail("method label '" + label + "' is missing a variance field");
    if (fields.size() > 3) fail("method label '" + label + "' has too many fields");
    const std::string& var = fields[1];
    if (var == "cr0") {
      spec.sandwich = SandwichKind::CR0;
    } else if (var == "cr3") {
      spec.sandwich = SandwichKind::CR3;
    } else {
      fail("unknown variance label '" + var + "' for estimator '" + est + "'");
    }
    if (fields.size() == 3) {
      const std::string& ref = fields[2];
      if (ref == "t") {
        spec.reference = ReferenceDist::StudentT;
      } else if (ref == "gaussian") {
        spec.reference = ReferenceDist::Gaussian;
      } else {
        fail("unknown reference label '" + ref + "' in method '" + label + "'");
      }
    }
    return spec;
  }
  if (est == "ht" || est == "ht-adj-prepost" || est == "ht-adj-full") {
    spec.family = MethodSpec::Family::Ht;
    spec.reference = ReferenceDist::Gaussian;
    spec.ht.adjustment = est == "ht"                ? HtAdjustment::None
                         : est == "ht-adj-prepost"  ? HtAdjustment::PrePostRollout
                                                    : HtAdjustment::FullData;
    if (fields.size() < 2) fail("method label '" + label + "' is missing a variance field");
    if (fields.size() > 2) fail("method label '" + label + "' has too many fields");
    const std::string& var = fields[1];
    if (var == "ht-conservative") {
      spec.ht.variance = HtVarianceKind::Conservative;
    } else if (var == "ht-simplified") {
      spec.ht.variance = HtVarianceKind::Simplified;
    } else {
      fail("unknown variance label '" + var + "' for estimator '" + est + "'");
    }
    return spec;
  }
  fail("unknown estimator label '" + est + "'");
}

void SimScenario::validate() const {
  design.validate();
  if (name.empty()) fail("scenario needs a name");
  if (n_reps < 1) fail("scenario '" + name + "' needs n_reps >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("scenario '" + name + "' needs alpha in (0, 1)");
  if (!(compliance_scale > 0.0)) {
    fail("scenario '" + name + "' needs a positive compliance_scale");
  }
  if (methods.empty()) fail("scenario '" + name + "' lists no methods");
  for (std::size_t a = 0; a < methods.size(); ++a) {
    for (std::size_t b = a + 1; b < methods.size(); ++b) {
      if (methods[a].label() == methods[b].label()) {
        fail("scenario '" + name + "' lists method '" + methods[a].label() + "' twice");
      }
    }
  }
}

std::string scenario_to_json_text(const SimScenario& scenario) {
  json j;
  j["name"] = scenario.name;
  j["design"] = json::parse(design_to_json_text(scenario.design));
  j["informative_size"] = scenario.informative_size;
  j["n_reps"] = scenario.n_reps;
  j["base_seed"] = scenario.base_seed;
  j["alpha"] = scenario.alpha;
  j["compliance_intercept"] = scenario.compliance_intercept;
  j["compliance_scale"] = scenario.compliance_scale;
  json methods = json::array();
  for (const MethodSpec& m : scenario.methods) methods.push_back(m.label());
  j["methods"] = methods;
  return j.dump(2) + "\n";
}

namespace {

SimScenario scenario_from_json(const json& j, const std::string& origin) {
  SimScenario sc;
  try {
    if (!j.contains("design")) fail("scenario is missing \"design\"");
    sc.design = design_from_json_text(j.at("design").dump());
    if (!j.contains("methods")) fail("scenario is missing \"methods\"");
    for (const json& m : j.at("methods")) {
      sc.methods.push_back(method_from_label(m.get<std::string>()));
    }
    if (j.contains("name")) {
      sc.name = j.at("name").get<std::string>();
    } else {
      sc.name = "I" + std::to_string(sc.design.clusters) + "-J" +
                std::to_string(sc.design.rollout_periods);
    }
    sc.informative_size = j.value("informative_size", false);
    sc.n_reps = j.value("n_reps", 1000);
    sc.base_seed = j.value("base_seed", std::uint64_t{0});
    sc.alpha = j.value("alpha", 0.05);
    sc.compliance_intercept = j.value("compliance_intercept", -0.5);
    sc.compliance_scale = j.value("compliance_scale", 2.5);
  } catch (const json::exception& e) {
    fail(origin + ": scenario JSON is malformed: " + e.what());
  } catch (const std::invalid_argument& e) {
    fail(origin + ": " + e.what());
  }
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    fail(origin + ": " + e.what());
  }
  return sc;
}

}  // namespace

SimScenario scenario_from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(origin + ": scenario JSON is malformed: " + e.what());
  }
  return scenario_from_json(j, origin);
}

std::vector<SimScenario> load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open scenario file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    fail(path + ": scenario JSON is malformed: " + e.what());
  }
  std::vector<SimScenario> scenarios;
  if (j.is_object() && j.contains("scenarios")) {
    int index = 0;
    for (const json& item : j.at("scenarios")) {
      scenarios.push_back(
          scenario_from_json(item, path + " (scenario " + std::to_string(index) + ")"));
      ++index;
    }
  } else {
    scenarios.push_back(scenario_from_json(j, path));
  }
  if (scenarios.empty()) fail(path + ": scenario file lists no scenarios");
  return scenarios;
}

std::vector<SimScenario> default_grid(int n_reps, std::uint64_t base_seed) {
  std::vector<StepWedgeDesign> designs;
  for (int i : {12, 30, 60, 90}) {
    StepWedgeDesign d;
    d.clusters = i;
    d.rollout_periods = 5;
    for (int j = 1; j <= 5; ++j) d.cumulative_treated.push_back(i * j / 6);
    d.validate();
    designs.push_back(std::move(d));
  }
  designs.push_back(StepWedgeDesign::one_at_a_time(10));

  std::vector<MethodSpec> methods;
  for (const char* est : {"unadjusted", "ancova1", "ancova3"}) {
    for (const char* var : {"cr0", "cr3"}) {
      methods.push_back(method_from_label(std::string(est) + "." + var + ".t"));
    }
  }
  for (const char* est : {"ht", "ht-adj-prepost", "ht-adj-full"}) {
    for (const char* var : {"ht-conservative", "ht-simplified"}) {
      methods.push_back(method_from_label(std::string(est) + "." + var));
    }
  }

  std::vector<SimScenario> grid;
  std::uint64_t seed = base_seed;
  for (const StepWedgeDesign& d : designs) {
    for (bool informative : {false, true}) {
      SimScenario sc;
      sc.name = "I" + std::to_string(d.clusters) + "-J" + std::to_string(d.rollout_periods) +
                (informative ? "-informative" : "-uninformative");
      sc.design = d;
      sc.informative_size = informative;
      sc.n_reps = n_reps;
      sc.base_seed = seed++;
      sc.methods = methods;
      sc.validate();
      grid.push_back(std::move(sc));
    }
  }
  return grid;
}

GeneratedTrial generate_trial(const SimScenario& scenario, std::uint64_t rep_index) {
  scenario.validate();
  const StepWedgeDesign& dz = scenario.design;
  const int ni = dz.clusters;
  const int nt = dz.total_periods();
  const auto rep = static_cast<std::uint32_t>(rep_index);
  const auto cell = [ni](int j, int i) { return static_cast<std::size_t>(j) * ni + i; };

  // Cluster-period sizes, drawn for every period including the all-control
  // and all-treated bookends. The expected size grows over time. Rounding is
  // to nearest (ties to even, which occur with probability zero).
  std::vector<int> size(static_cast<std::size_t>(nt) * ni);
  {
    Rng rng(scenario.base_seed, rep, stream::kSizes);
    for (int j = 0; j < nt; ++j) {
      const double drift = 2.0 * std::pow(j + 1.0, 1.5);
      for (int i = 0; i < ni; ++i) {
        size[cell(j, i)] = static_cast<int>(std::nearbyint(rng.uniform(10.0, 90.0) + drift));
      }
    }
  }
  std::vector<std::size_t> offset(size.size() + 1, 0);
  for (std::size_t c = 0; c < size.size(); ++c) offset[c + 1] = offset[c] + size[c];
  const std::size_t total = offset.back();

  // Cluster-period binary covariate and cluster random effects.
  std::vector<double> x1(size.size());
  {
    Rng rng(scenario.base_seed, rep, stream::kClusterPeriodCovariate);
    for (int j = 0; j < nt; ++j) {
      for (int i = 0; i < ni; ++i) x1[cell(j, i)] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
  }
  std::vector<double> cluster_effect(size.size());
  {
    Rng rng(scenario.base_seed, rep, stream::kClusterEffect);
    for (std::size_t i = 0; i < cluster_effect.size(); ++i)
      cluster_effect[i] = rng.normal(0.0, std::sqrt(0.1));
  }
  const auto ceff = [&](int j, int i) { return cluster_effect[cell(j, i)]; };

  // Individual covariate with a cluster-specific location, and its realized
  // per-period sample means (the outcome model centers at those).
  std::vector<double> x2(total);
  std::vector<double> x2_mean(static_cast<std::size_t>(nt), 0.0);
  {
    Rng rng(scenario.base_seed, rep, stream::kIndividualCovariate);
    for (int j = 0; j < nt; ++j) {
      double sum = 0.0;
      std::size_t count = 0;
      for (int i = 0; i < ni; ++i) {
        const double loc = (i + 1.0) / ni;
        for (std::size_t r = offset[cell(j, i)]; r < offset[cell(j, i) + 1]; ++r) {
          x2[r] = loc + rng.uniform(-1.0, 1.0);
          sum += x2[r];
        }
        count += static_cast<std::size_t>(size[cell(j, i)]);
      }
      x2_mean[j] = sum / static_cast<double>(count);
    }
  }

  std::vector<double> noise(total);
  {
    Rng rng(scenario.base_seed, rep, stream::kNoise);
    for (std::size_t r = 0; r < total; ++r) noise[r] = rng.normal(0.0, std::sqrt(0.9));
  }

  // When cluster size is informative, larger cluster-periods get a bigger
  // treatment effect and a higher always-taker share. The scaling is by the
  // grand mean cluster-period size, so the term hovers around twice the
  // relative size.
  const double size_scale =
      scenario.informative_size ? 2.0 * ni / static_cast<double>(total) : 0.0;

  PotentialOutcomeTable table(dz, 2);
  Rng crng(scenario.base_seed, rep, stream::kCompliance);
  for (int j = 0; j < nt; ++j) {
    const double time = (j + 1.0) / (dz.rollout_periods + 2.0);
    for (int i = 0; i < ni; ++i) {
      const std::size_t c = cell(j, i);
      const double info = size_scale * size[c];
      for (std::size_t r = offset[c]; r < offset[c + 1]; ++r) {
        const double dev = x2[r] - x2_mean[j];
        const double y0 = time + x1[c] + dev * dev + ceff(j, i) + noise[r];
        const double y1 = y0 + info + 0.5 * x1[c] + dev * dev * dev;

        // Compliance class: 0 complier, 1 always-taker, 2 never-taker. The
        // always-taker tilt is even-plus-odd in the covariate deviation:
        // large deviations of either sign raise the always-taker share, and
        // negative deviations raise it a little more, which leaves compliers
        // slightly enriched at positive deviations.
        const double dev_term = 0.5 * dev * dev - 0.3 * dev * dev * dev;
        const double logit_always = (scenario.compliance_intercept + time + info +
                                     0.7 * x1[c] + dev_term + ceff(j, i) +
                                     noise[r]) /
                                    scenario.compliance_scale;
        const double logit_never = (scenario.compliance_intercept - time - info -
                                    0.4 * x1[c] + dev * dev - ceff(j, i) + noise[r]) /
                                   scenario.compliance_scale;
        const double odds_always = std::exp(logit_always);
        const double odds_never = std::exp(logit_never);
        const double denom = 1.0 + odds_always + odds_never;
        const double u = crng.u01();
        int d1 = 1;
        int d0 = 0;
        double y_z1 = y1;
        double y_z0 = y0;
        if (u >= 1.0 / denom) {
          if (u < (1.0 + odds_always) / denom) {
            d0 = 1;     // always-taker: treated either way
            y_z0 = y1;
          } else {
            d1 = 0;     // never-taker: untreated either way
            y_z1 = y0;
          }
        }
        const double x_row[2] = {x1[c], x2[r]};
        table.append(i, j, y_z1, y_z0, d1, d0, x_row);
      }
    }
  }
  table.validate();

  Rng arng(scenario.base_seed, rep, stream::kAssignment);
  const AssignmentRealization assignment = sample_assignment(dz, arng);
  TrialDataset data = table.materialize(assignment);
  return GeneratedTrial{std::move(table), std::move(data)};
}

double MethodTally::type_i_rate() const {
  if (decided_at_true == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(reject_at_true) / static_cast<double>(decided_at_true);
}

double MethodTally::power() const {
  if (decided_at_zero == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(reject_at_zero) / static_cast<double>(decided_at_zero);
}

double MethodTally::bias() const {
  if (estimates == 0) return std::numeric_limits<double>::quiet_NaN();
  return err_sum / static_cast<double>(estimates);
}

double MethodTally::mse() const {
  if (estimates == 0) return std::numeric_limits<double>::quiet_NaN();
  return err_sq_sum / static_cast<double>(estimates);
}

namespace {

struct MethodRepOutcome {
  bool decided_true = false;
  bool reject_true = false;
  bool declined_true = false;
  bool decided_zero = false;
  bool reject_zero = false;
  bool declined_zero = false;
  bool degenerate = false;
  bool has_estimate = false;
  bool estimate_error = false;
  double err = 0.0;
};

struct RepOutcome {
  double true_lambda = 0.0;
  double true_tau = 0.0;
  double compliance = 0.0;
  std::vector<MethodRepOutcome> methods;
};

RepOutcome run_one_rep(const SimScenario& scenario, long long rep) {
  RepOutcome out;
  const GeneratedTrial trial = generate_trial(scenario, static_cast<std::uint64_t>(rep));
  const TrueEstimands truth = true_estimands(trial.table);
  out.true_lambda = truth.lambda;
  out.true_tau = truth.tau;
  out.compliance = truth.compliance_rate;
  out.methods.resize(scenario.methods.size());

  std::shared_ptr<const PairProbabilities> probs;
  for (std::size_t m = 0; m < scenario.methods.size(); ++m) {
    const MethodSpec& spec = scenario.methods[m];
    MethodRepOutcome& mo = out.methods[m];
    if (spec.family == MethodSpec::Family::Ancova) {
      try {
        const AncovaFit fit = AncovaFit::fit(trial.data, spec.ancova);
        const auto run_test = [&](double lambda0, bool& decided, bool& reject, bool& declined) {
          try {
            const TestResult t = fit.test(lambda0, spec.sandwich, spec.reference);
            decided = true;
            reject = t.reject(scenario.alpha);
            mo.degenerate = mo.degenerate || t.degenerate_variance;
          } catch (const std::exception&) {
            declined = true;
          }
        };
        run_test(out.true_lambda, mo.decided_true, mo.reject_true, mo.declined_true);
        run_test(0.0, mo.decided_zero, mo.reject_zero, mo.declined_zero);
        try {
          mo.err = fit.lambda_hat() - out.true_lambda;
          mo.has_estimate = true;
        } catch (const std::exception&) {
          mo.estimate_error = true;
        }
      } catch (const std::exception&) {
        mo.declined_true = true;
        mo.declined_zero = true;
        mo.estimate_error = true;
      }
    } else {
      try {
        if (!probs) probs = std::make_shared<PairProbabilities>(trial.data.design());
        const HtAnalysis analysis(trial.data, spec.ht, probs);
        const auto run_test = [&](double lambda0, bool& decided, bool& reject, bool& declined) {
          const HtTestOutcome o = analysis.test(lambda0);
          if (o.declined) {
            declined = true;
            return;
          }
          decided = true;
          reject = o.result.reject(scenario.alpha);
          mo.degenerate = mo.degenerate || o.result.degenerate_variance;
        };
        run_test(out.true_lambda, mo.decided_true, mo.reject_true, mo.declined_true);
        run_test(0.0, mo.decided_zero, mo.reject_zero, mo.declined_zero);
        try {
          mo.err = analysis.lambda_hat() - out.true_lambda;
          mo.has_estimate = true;
        } catch (const std::exception&) {
          mo.estimate_error = true;
        }
      } catch (const std::exception&) {
        mo.declined_true = true;
        mo.declined_zero = true;
        mo.estimate_error = true;
      }
    }
  }
  return out;
}

int resolve_worker_count(long long jobs) {
  long long workers = std::thread::hardware_concurrency();
  if (workers < 1) workers = 1;
  if (const char* env = std::getenv("SWEDGE_THREADS")) {
    char* end = nullptr;
    const long requested = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || requested < 1) {
      throw std::runtime_error("SWEDGE_THREADS must be a positive integer, got '" +
                               std::string(env) + "'");
    }
    workers = requested;
  }
  if (workers > jobs) workers = jobs;
  return static_cast<int>(workers);
}

}  // namespace

SimReport run_cell(const SimScenario& scenario) {
  scenario.validate();
  const long long reps = scenario.n_reps;
  std::vector<RepOutcome> outcomes(static_cast<std::size_t>(reps));

  const int workers = resolve_worker_count(reps);
  if (workers <= 1) {
    for (long long r = 0; r < reps; ++r) outcomes[r] = run_one_rep(scenario, r);
  } else {
    std::atomic<long long> cursor{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto work = [&] {
      while (true) {
        const long long r = cursor.fetch_add(1);
        if (r >= reps) return;
        try {
          outcomes[r] = run_one_rep(scenario, r);
        } catch (...) {
          const std::lock_guard<std::mutex> hold(failure_lock);
          if (!failure) failure = std::current_exception();
          cursor.store(reps);
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  // The reduction walks replicates in order, so the report does not depend
  // on which worker ran which replicate.
  SimReport report;
  report.scenario = scenario.name;
  report.reps = scenario.n_reps;
  report.alpha = scenario.alpha;
  report.true_lambda.reserve(outcomes.size());
  report.true_tau.reserve(outcomes.size());
  report.compliance_rate.reserve(outcomes.size());
  report.methods.resize(scenario.methods.size());
  for (std::size_t m = 0; m < scenario.methods.size(); ++m) {
    report.methods[m].method = scenario.methods[m].label();
  }
  for (const RepOutcome& rep : outcomes) {
    report.true_lambda.push_back(rep.true_lambda);
    report.true_tau.push_back(rep.true_tau);
    report.compliance_rate.push_back(rep.compliance);
    for (std::size_t m = 0; m < rep.methods.size(); ++m) {
      const MethodRepOutcome& mo = rep.methods[m];
      MethodTally& tally = report.methods[m];
      tally.reps += 1;
      tally.decided_at_true += mo.decided_true;
      tally.reject_at_true += mo.reject_true;
      tally.declined_at_true += mo.declined_true;
      tally.decided_at_zero += mo.decided_zero;
      tally.reject_at_zero += mo.reject_zero;
      tally.declined_at_zero += mo.declined_zero;
      tally.degenerate += mo.degenerate;
      tally.estimates += mo.has_estimate;
      tally.estimate_errors += mo.estimate_error;
      if (mo.has_estimate) {
        tally.err_sum += mo.err;
        tally.err_sq_sum += mo.err * mo.err;
      }
    }
  }
  double lambda_sum = 0.0;
  double tau_sum = 0.0;
  double compliance_sum = 0.0;
  for (const RepOutcome& rep : outcomes) {
    lambda_sum += rep.true_lambda;
    tau_sum += rep.true_tau;
    compliance_sum += rep.compliance;
  }
  const double count = static_cast<double>(outcomes.size());
  report.mean_true_lambda = lambda_sum / count;
  report.mean_true_tau = tau_sum / count;
  report.mean_compliance = compliance_sum / count;
  return report;
}

std::vector<SimReport> run_grid(const std::vector<SimScenario>& scenarios) {
  std::vector<SimReport> reports;
  reports.reserve(scenarios.size());
  for (const SimScenario& scenario : scenarios) reports.push_back(run_cell(scenario));
  return reports;
}

}  // namespace swedge
