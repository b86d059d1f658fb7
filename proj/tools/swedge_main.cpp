// SPDX-License-Identifier: MIT
// Command line front end. Subcommands: analyze (estimator table for one
// dataset), simulate (Monte Carlo grid), design-probe (assignment
// probabilities for a design), diagnose (duration association tests and a
// covariate balance table). Every run writes its report files plus a
// manifest echoing the resolved configuration, so a rerun with the same
// inputs reproduces the same bytes.

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "swedge/ancova.hpp"
#include "swedge/dataset.hpp"
#include "swedge/design.hpp"
#include "swedge/diagnostics.hpp"
#include "swedge/fieller.hpp"
#include "swedge/ht.hpp"
#include "swedge/numio.hpp"
#include "swedge/report.hpp"
#include "swedge/sim.hpp"

namespace {

using json = nlohmann::json;
using namespace swedge;

constexpr int kExitSuccess = 0;
constexpr int kExitDegenerate = 1;
constexpr int kExitConfig = 2;

struct CommonOptions {
  std::string out_dir = ".";
  std::string format = "table";
};

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_manifest(const std::string& dir, const std::string& command, const json& config) {
  write_text_file(join_path(dir, "manifest.json"), manifest_json_text(command, config.dump()));
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  CommonOptions common;
  std::string data_path;
  std::string design_path;
  std::vector<std::string> estimators;
  std::vector<std::string> variances;
  std::string reference = "t";
  double alpha = 0.05;
  double lambda0 = 0.0;
  bool lambda0_set = false;
};

struct AnalyzeRow {
  std::string estimator;
  std::string variance;
  bool failed = false;
  std::string note;
  InferenceResult result;
  IntervalSet ci90;
  IntervalSet ci95;
  bool lambda0_declined = false;
  TestResult at_lambda0;
};

AnalyzeRow run_analyze_row(const TrialDataset& data, const MethodSpec& method, double alpha,
                           bool lambda0_set, double lambda0,
                           std::shared_ptr<const PairProbabilities>& probs) {
  AnalyzeRow row;
  if (method.family == MethodSpec::Family::Ancova) {
    row.estimator = to_string(method.ancova.flavor);
    row.variance = to_string(method.sandwich);
  } else {
    row.estimator = to_string(method.ht.adjustment);
    row.variance = to_string(method.ht.variance);
  }
  try {
    InferenceResult& r = row.result;
    r.estimator = row.estimator;
    r.variance = row.variance;
    r.alpha = alpha;
    if (method.family == MethodSpec::Family::Ancova) {
      const AncovaFit fit = AncovaFit::fit(data, method.ancova);
      const TestResult t0 = fit.test(0.0, method.sandwich, method.reference);
      r.tau_at_0 = t0.tau_hat;
      r.deviate_at_0 = t0.deviate;
      r.df = t0.df;
      r.p_value_at_0 = t0.p_value;
      r.degenerate_variance = t0.degenerate_variance;
      r.lambda_hat = fit.lambda_hat();
      const VarianceQuadratic q = fit.variance_quadratic(method.sandwich);
      r.se_at_lambda_hat = std::sqrt(std::max(q.at(r.lambda_hat), 0.0));
      r.interval = fit.invert_ci(method.sandwich, method.reference, alpha);
      row.ci90 = fit.invert_ci(method.sandwich, method.reference, 0.10);
      row.ci95 = fit.invert_ci(method.sandwich, method.reference, 0.05);
      if (lambda0_set) row.at_lambda0 = fit.test(lambda0, method.sandwich, method.reference);
    } else {
      if (!probs) probs = std::make_shared<PairProbabilities>(data.design());
      const HtAnalysis analysis(data, method.ht, probs);
      const HtTestOutcome t0 = analysis.test(0.0);
      if (t0.declined) throw std::runtime_error(t0.diagnostic);
      r.tau_at_0 = t0.result.tau_hat;
      r.deviate_at_0 = t0.result.deviate;
      r.df = t0.result.df;
      r.p_value_at_0 = t0.result.p_value;
      r.degenerate_variance = t0.result.degenerate_variance;
      r.lambda_hat = analysis.lambda_hat();
      const double v = analysis.variance_quadratic().at(r.lambda_hat);
      if (v >= 0.0) {
        r.se_at_lambda_hat = std::sqrt(v);
      } else {
        r.se_at_lambda_hat = std::numeric_limits<double>::quiet_NaN();
        r.degenerate_variance = true;
        row.note = "variance estimate negative at lambda_hat";
      }
      r.interval = analysis.invert_ci(alpha);
      row.ci90 = analysis.invert_ci(0.10);
      row.ci95 = analysis.invert_ci(0.05);
      if (lambda0_set) {
        const HtTestOutcome tl = analysis.test(lambda0);
        row.lambda0_declined = tl.declined;
        if (!tl.declined) row.at_lambda0 = tl.result;
      }
    }
  } catch (const std::exception& e) {
    row.failed = true;
    row.note = e.what();
  }
  return row;
}

int cmd_analyze(const AnalyzeOptions& opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) {
    throw std::invalid_argument("--alpha must lie in (0, 1)");
  }
  const StepWedgeDesign design = load_design_file(opt.design_path);
  const TrialDataset data = TrialDataset::load_csv(opt.data_path, design);

  std::vector<std::string> estimators = opt.estimators;
  if (estimators.empty()) {
    estimators = {"unadjusted", "ancova1", "ancova3", "ht", "ht-adj-prepost", "ht-adj-full"};
  }
  std::string ancova_variance = "cr3";
  std::string ht_variance = "ht-conservative";
  bool ancova_variance_set = false;
  bool ht_variance_set = false;
  for (const std::string& v : opt.variances) {
    if (v == "cr0" || v == "cr3") {
      if (ancova_variance_set) {
        throw std::invalid_argument("--variance given twice for the regression family");
      }
      ancova_variance = v;
      ancova_variance_set = true;
    } else if (v == "ht-conservative" || v == "ht-simplified") {
      if (ht_variance_set) {
        throw std::invalid_argument("--variance given twice for the ht family");
      }
      ht_variance = v;
      ht_variance_set = true;
    } else {
      throw std::invalid_argument("unknown variance label '" + v + "'");
    }
  }

  std::vector<MethodSpec> methods;
  for (const std::string& est : estimators) {
    const bool is_ht = est.rfind("ht", 0) == 0;
    const std::string label = is_ht ? est + "." + ht_variance
                                    : est + "." + ancova_variance + "." + opt.reference;
    methods.push_back(method_from_label(label));
  }

  std::vector<AnalyzeRow> rows;
  std::shared_ptr<const PairProbabilities> probs;
  for (const MethodSpec& method : methods) {
    rows.push_back(
        run_analyze_row(data, method, opt.alpha, opt.lambda0_set, opt.lambda0, probs));
  }

  std::vector<std::string> header = {"estimator", "variance", "lambda_hat", "se",
                                     "ci90",      "ci95",     "p_at_0"};
  if (opt.lambda0_set) header.push_back("p_at_" + format_double(opt.lambda0));
  header.push_back("note");
  std::vector<std::vector<std::string>> cells;
  for (const AnalyzeRow& row : rows) {
    std::vector<std::string> line = {row.estimator, row.variance};
    if (row.failed) {
      const std::size_t blanks = header.size() - 3;
      for (std::size_t c = 0; c < blanks; ++c) line.push_back("-");
    } else {
      line.push_back(format_double(row.result.lambda_hat));
      line.push_back(format_double(row.result.se_at_lambda_hat));
      line.push_back(row.ci90.describe());
      line.push_back(row.ci95.describe());
      line.push_back(format_double(row.result.p_value_at_0));
      if (opt.lambda0_set) {
        line.push_back(row.lambda0_declined ? "declined" : format_double(row.at_lambda0.p_value));
      }
    }
    line.push_back(row.note);
    cells.push_back(std::move(line));
  }
  const std::string table = render_table(header, cells);

  std::string csv = inference_csv_header();
  json json_rows = json::array();
  std::vector<InferenceResult> ok_results;
  for (const AnalyzeRow& row : rows) {
    if (row.failed) {
      json err;
      err["estimator"] = row.estimator;
      err["variance"] = row.variance;
      err["error"] = row.note;
      json_rows.push_back(err);
      continue;
    }
    csv += inference_csv_row(row.result);
    json_rows.push_back(json::parse(inference_to_json_text(row.result)));
    ok_results.push_back(row.result);
  }
  const std::string json_text = json_rows.dump(2) + "\n";

  ensure_out_dir(opt.common.out_dir);
  write_text_file(join_path(opt.common.out_dir, "analysis.txt"), table);
  write_text_file(join_path(opt.common.out_dir, "analysis.csv"), csv);
  write_text_file(join_path(opt.common.out_dir, "analysis.json"), json_text);

  json config;
  config["data"] = opt.data_path;
  config["design"] = json::parse(design_to_json_text(design));
  config["estimators"] = estimators;
  config["variance"] = {{"regression", ancova_variance}, {"ht", ht_variance}};
  config["reference"] = opt.reference;
  config["alpha"] = opt.alpha;
  if (opt.lambda0_set) config["lambda0"] = opt.lambda0;
  config["out"] = opt.common.out_dir;
  write_manifest(opt.common.out_dir, "analyze", config);

  if (opt.common.format == "json") {
    std::cout << json_text;
  } else if (opt.common.format == "csv") {
    std::cout << csv;
  } else {
    std::cout << table;
  }
  for (const AnalyzeRow& row : rows) {
    if (row.failed) {
      std::cerr << "note: " << row.estimator << "." << row.variance << ": " << row.note << "\n";
    }
  }
  const bool all_failed =
      !rows.empty() && std::all_of(rows.begin(), rows.end(),
                                   [](const AnalyzeRow& r) { return r.failed; });
  return all_failed ? kExitDegenerate : kExitSuccess;
}

// ---------------------------------------------------------------------------
// design-probe

struct ProbeOptions {
  CommonOptions common;
  std::string design_path;
};

int cmd_design_probe(const ProbeOptions& opt) {
  const StepWedgeDesign design = load_design_file(opt.design_path);
  const EnumerationCount count = enumeration_count(design);

  std::string text = "design: I=" + std::to_string(design.clusters) +
                     ", J=" + std::to_string(design.rollout_periods) +
                     " rollout periods (periods 0.." + std::to_string(design.post_period()) +
                     ")\n";
  text += "cumulative treated:";
  for (int c : design.cumulative_treated) text += " " + std::to_string(c);
  text += "\n";
  const bool enumerable = count.exact && count.value <= kDefaultEnumerationCap;
  if (enumerable) {
    text += "enumerable: " + std::to_string(count.value) + " assignments\n";
  } else if (count.exact) {
    text += "assignments: " + std::to_string(count.value) + " (exceeds enumeration cap " +
            std::to_string(kDefaultEnumerationCap) + ")\n";
  } else {
    text += "assignments: too many to count in 64 bits\n";
  }
  text += "\n";

  std::vector<std::vector<std::string>> cells;
  json periods = json::array();
  for (int j = 1; j <= design.rollout_periods; ++j) {
    const Rational e = propensity_exact(design, j);
    const int treated = design.treated_by(j);
    const bool lone_treated = treated == 1;
    const bool lone_control = design.clusters - treated == 1;
    std::string flags;
    if (lone_treated) flags = "one-at-a-time (I_j = 1)";
    if (lone_control) {
      if (!flags.empty()) flags += "; ";
      flags += "one-at-a-time (I - I_j = 1)";
    }
    cells.push_back({std::to_string(j), std::to_string(treated), e.str(),
                     format_double(e.to_double()), flags});
    json p;
    p["period"] = j;
    p["treated"] = treated;
    p["propensity_exact"] = e.str();
    p["propensity"] = e.to_double();
    p["lone_treated"] = lone_treated;
    p["lone_control"] = lone_control;
    periods.push_back(p);
  }
  text += render_table({"period", "treated", "e_j", "e_j (float)", "flags"}, cells);

  json doc;
  doc["design"] = json::parse(design_to_json_text(design));
  doc["assignments"] = count.value;
  doc["assignment_count_exact"] = count.exact;
  doc["enumerable"] = enumerable;
  doc["periods"] = periods;
  const std::string json_text = doc.dump(2) + "\n";

  ensure_out_dir(opt.common.out_dir);
  write_text_file(join_path(opt.common.out_dir, "design_probe.txt"), text);
  write_text_file(join_path(opt.common.out_dir, "design_probe.json"), json_text);
  json config;
  config["design"] = json::parse(design_to_json_text(design));
  config["out"] = opt.common.out_dir;
  write_manifest(opt.common.out_dir, "design-probe", config);

  std::cout << (opt.common.format == "json" ? json_text : text);
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseOptions {
  CommonOptions common;
  std::string data_path;
  std::string design_path;
  double alpha = 0.05;
};

int cmd_diagnose(const DiagnoseOptions& opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) {
    throw std::invalid_argument("--alpha must lie in (0, 1)");
  }
  const StepWedgeDesign design = load_design_file(opt.design_path);
  const TrialDataset data = TrialDataset::load_csv(opt.data_path, design);

  std::string text;
  json doc;
  bool duration_ok = false;
  bool balance_ok = false;

  text += "duration association tests (time on arm vs response)\n";
  try {
    const std::vector<DurationTestResult> tests = duration_tests(data);
    std::vector<std::vector<std::string>> cells;
    json rows = json::array();
    for (const DurationTestResult& t : tests) {
      cells.push_back({t.response, t.arm, format_double(t.coefficient), format_double(t.se),
                       format_double(t.t_stat), format_double(t.df), format_double(t.p_value),
                       std::to_string(t.rows), std::to_string(t.clusters),
                       t.p_value < opt.alpha ? "reject" : ""});
      json r;
      r["response"] = t.response;
      r["arm"] = t.arm;
      r["coefficient"] = t.coefficient;
      r["se"] = t.se;
      r["t_stat"] = t.t_stat;
      r["df"] = t.df;
      r["p_value"] = t.p_value;
      r["rows"] = t.rows;
      r["clusters"] = t.clusters;
      rows.push_back(r);
    }
    text += render_table({"response", "arm", "coefficient", "se", "t", "df", "p_value", "rows",
                          "clusters", "at alpha=" + format_double(opt.alpha)},
                         cells);
    doc["duration_tests"] = rows;
    duration_ok = true;
  } catch (const std::exception& e) {
    text += std::string("error: ") + e.what() + "\n";
    doc["duration_tests_error"] = e.what();
  }

  text += "\ncovariate balance (rollout periods)\n";
  try {
    const std::vector<BalanceRow> balance = balance_table(data);
    std::vector<std::vector<std::string>> cells;
    json rows = json::array();
    for (const BalanceRow& b : balance) {
      cells.push_back({b.label, format_double(b.mean_treated), format_double(b.sd_treated),
                       format_double(b.mean_control), format_double(b.sd_control),
                       b.infinite_smd ? "inf" : format_double(b.smd)});
      json r;
      r["covariate"] = b.label;
      r["mean_treated"] = b.mean_treated;
      r["sd_treated"] = b.sd_treated;
      r["mean_control"] = b.mean_control;
      r["sd_control"] = b.sd_control;
      if (b.infinite_smd) {
        r["smd"] = nullptr;
        r["infinite_smd"] = true;
      } else {
        r["smd"] = b.smd;
      }
      rows.push_back(r);
    }
    text += render_table(
        {"covariate", "mean_treated", "sd_treated", "mean_control", "sd_control", "smd"}, cells);
    doc["balance"] = rows;
    balance_ok = true;
  } catch (const std::exception& e) {
    text += std::string("error: ") + e.what() + "\n";
    doc["balance_error"] = e.what();
  }

  const std::string json_text = doc.dump(2) + "\n";
  ensure_out_dir(opt.common.out_dir);
  write_text_file(join_path(opt.common.out_dir, "diagnostics.txt"), text);
  write_text_file(join_path(opt.common.out_dir, "diagnostics.json"), json_text);
  json config;
  config["data"] = opt.data_path;
  config["design"] = json::parse(design_to_json_text(design));
  config["alpha"] = opt.alpha;
  config["out"] = opt.common.out_dir;
  write_manifest(opt.common.out_dir, "diagnose", config);

  std::cout << (opt.common.format == "json" ? json_text : text);
  if (!duration_ok && !balance_ok) return kExitDegenerate;
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  CommonOptions common;
  std::string scenario_path;
  std::string emit_grid_path;
  int reps = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_simulate(const SimulateOptions& opt) {
  if (!opt.emit_grid_path.empty()) {
    const int reps = opt.reps > 0 ? opt.reps : 1000;
    const std::vector<SimScenario> grid = default_grid(reps, opt.seed);
    json doc;
    json arr = json::array();
    for (const SimScenario& sc : grid) arr.push_back(json::parse(scenario_to_json_text(sc)));
    doc["scenarios"] = arr;
    write_text_file(opt.emit_grid_path, doc.dump(2) + "\n");
    std::cout << "wrote " << grid.size() << " scenarios to " << opt.emit_grid_path << "\n";
    return kExitSuccess;
  }
  if (opt.scenario_path.empty()) {
    throw std::invalid_argument("simulate needs --scenarios (or --emit-default-grid)");
  }
  std::vector<SimScenario> scenarios = load_scenario_file(opt.scenario_path);
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    if (opt.reps > 0) scenarios[s].n_reps = opt.reps;
    if (opt.seed_set) scenarios[s].base_seed = opt.seed + s;
  }

  const std::vector<SimReport> reports = run_grid(scenarios);
  const std::string csv = grid_results_csv(reports);
  const std::string json_text = grid_results_json_text(reports);

  ensure_out_dir(opt.common.out_dir);
  write_text_file(join_path(opt.common.out_dir, "results.csv"), csv);
  write_text_file(join_path(opt.common.out_dir, "results.json"), json_text);

  json config;
  config["scenario_file"] = opt.scenario_path;
  json arr = json::array();
  for (const SimScenario& sc : scenarios) arr.push_back(json::parse(scenario_to_json_text(sc)));
  config["scenarios"] = arr;
  config["out"] = opt.common.out_dir;
  if (opt.seed_set) config["seed"] = opt.seed;
  write_manifest(opt.common.out_dir, "simulate", config);

  if (opt.common.format == "json") {
    std::cout << json_text;
  } else if (opt.common.format == "csv") {
    std::cout << csv;
  } else {
    std::vector<std::vector<std::string>> cells;
    for (const SimReport& r : reports) {
      cells.push_back({r.scenario, std::to_string(r.reps),
                       format_double(r.mean_true_lambda), format_double(r.mean_compliance),
                       std::to_string(r.methods.size())});
    }
    std::cout << render_table(
        {"scenario", "reps", "mean_true_lambda", "mean_compliance", "methods"}, cells);
  }
  return kExitSuccess;
}

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--out", common.out_dir, "Directory for report files")
      ->capture_default_str();
  cmd->add_option("--format", common.format, "Stdout format")
      ->check(CLI::IsMember({"table", "csv", "json"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomization-based effect-ratio analysis for stepped-wedge trials"};
  app.require_subcommand(1);

  AnalyzeOptions analyze_opt;
  CLI::App* analyze = app.add_subcommand("analyze", "Estimate the effect ratio on one dataset");
  analyze->add_option("--data", analyze_opt.data_path, "Trial data CSV")->required();
  analyze->add_option("--design", analyze_opt.design_path, "Design JSON")->required();
  analyze->add_option("--estimator", analyze_opt.estimators,
                      "Estimator (repeatable): unadjusted|ancova1|ancova3|ht|ht-adj-prepost|"
                      "ht-adj-full; default all");
  analyze->add_option("--variance", analyze_opt.variances,
                      "Variance (repeatable, one per family): cr0|cr3|ht-conservative|"
                      "ht-simplified; defaults cr3 and ht-conservative");
  analyze->add_option("--ref", analyze_opt.reference, "Reference distribution for regression tests")
      ->check(CLI::IsMember({"t", "gaussian"}))
      ->capture_default_str();
  analyze->add_option("--alpha", analyze_opt.alpha, "Test level")->capture_default_str();
  analyze->add_option("--lambda0", analyze_opt.lambda0, "Also test H0: lambda = lambda0");
  add_common(analyze, analyze_opt.common);

  ProbeOptions probe_opt;
  CLI::App* probe = app.add_subcommand("design-probe", "Assignment probabilities for a design");
  probe->add_option("--design", probe_opt.design_path, "Design JSON")->required();
  add_common(probe, probe_opt.common);

  DiagnoseOptions diagnose_opt;
  CLI::App* diagnose =
      app.add_subcommand("diagnose", "Duration association tests and covariate balance");
  diagnose->add_option("--data", diagnose_opt.data_path, "Trial data CSV")->required();
  diagnose->add_option("--design", diagnose_opt.design_path, "Design JSON")->required();
  diagnose->add_option("--alpha", diagnose_opt.alpha, "Flagging level")->capture_default_str();
  add_common(diagnose, diagnose_opt.common);

  SimulateOptions simulate_opt;
  CLI::App* simulate = app.add_subcommand("simulate", "Run a Monte Carlo scenario file");
  simulate->add_option("--scenarios", simulate_opt.scenario_path, "Scenario JSON file");
  simulate->add_option("--emit-default-grid", simulate_opt.emit_grid_path,
                       "Write the standard evaluation grid to this path and exit");
  simulate->add_option("--reps", simulate_opt.reps, "Override n_reps for every scenario");
  simulate->add_option("--seed", simulate_opt.seed,
                       "Override base seeds (scenario s uses seed + s)");
  add_common(simulate, simulate_opt.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  analyze_opt.lambda0_set = analyze->count("--lambda0") > 0;
  simulate_opt.seed_set = simulate->count("--seed") > 0;

  try {
    if (*analyze) return cmd_analyze(analyze_opt);
    if (*probe) return cmd_design_probe(probe_opt);
    if (*diagnose) return cmd_diagnose(diagnose_opt);
    if (*simulate) return cmd_simulate(simulate_opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  std::cerr << "error: no subcommand selected\n";
  return kExitConfig;
}
