// SPDX-License-Identifier: MIT

#include "swedge/report.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "swedge/numio.hpp"

namespace swedge {
namespace {

using json = nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

// NaN and infinities have no JSON representation; nlohmann would emit the
// literal null anyway, but passing an explicit null keeps the intent visible.
json number_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

json interval_to_json(const IntervalSet& interval) {
  json j;
  j["type"] = interval_type_name(interval.kind());
  switch (interval.kind()) {
    case IntervalSet::Kind::Bounded:
    case IntervalSet::Kind::TwoRays:
    case IntervalSet::Kind::Point:
      j["lo"] = number_or_null(interval.lo());
      j["hi"] = number_or_null(interval.hi());
      break;
    case IntervalSet::Kind::WholeLine:
    case IntervalSet::Kind::Empty:
      break;
  }
  return j;
}

json inference_to_json(const InferenceResult& r) {
  json j;
  j["estimator"] = r.estimator;
  j["variance"] = r.variance;
  j["lambda_hat"] = number_or_null(r.lambda_hat);
  j["tau_at_0"] = number_or_null(r.tau_at_0);
  j["se_at_lambda_hat"] = number_or_null(r.se_at_lambda_hat);
  j["df"] = number_or_null(r.df);
  j["alpha"] = r.alpha;
  j["interval"] = interval_to_json(r.interval);
  j["p_value_at_0"] = number_or_null(r.p_value_at_0);
  return j;
}

json tally_to_json(const MethodTally& t) {
  json j;
  j["method"] = t.method;
  j["reps"] = t.reps;
  j["bias"] = number_or_null(t.bias());
  j["mse"] = number_or_null(t.mse());
  j["type.I"] = number_or_null(t.type_i_rate());
  j["power"] = number_or_null(t.power());
  j["decided_at_true"] = t.decided_at_true;
  j["declined_at_true"] = t.declined_at_true;
  j["decided_at_zero"] = t.decided_at_zero;
  j["declined_at_zero"] = t.declined_at_zero;
  j["degenerate"] = t.degenerate;
  j["estimates"] = t.estimates;
  j["estimate_errors"] = t.estimate_errors;
  return j;
}

}  // namespace

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw std::invalid_argument("table row has " + std::to_string(row.size()) +
                                  " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c].size() > width[c]) width[c] = row[c].size();
    }
  }
  std::string out;
  const auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out.append(width[c] - row[c].size() + 2, ' ');
    }
    out += '\n';
  };
  emit(header);
  for (std::size_t c = 0; c < header.size(); ++c) {
    out.append(width[c], '-');
    if (c + 1 < header.size()) out.append(2, ' ');
  }
  out += '\n';
  for (const auto& row : rows) emit(row);
  return out;
}

const char* interval_type_name(IntervalSet::Kind kind) {
  switch (kind) {
    case IntervalSet::Kind::Bounded: return "bounded";
    case IntervalSet::Kind::TwoRays: return "two_rays";
    case IntervalSet::Kind::WholeLine: return "whole_line";
    case IntervalSet::Kind::Empty: return "empty";
    case IntervalSet::Kind::Point: return "point";
  }
  throw std::invalid_argument("unknown interval kind");
}

std::string inference_to_json_text(const InferenceResult& result, int indent) {
  return inference_to_json(result).dump(indent) + "\n";
}

std::string inference_list_to_json_text(const std::vector<InferenceResult>& results,
                                        int indent) {
  json arr = json::array();
  for (const InferenceResult& r : results) arr.push_back(inference_to_json(r));
  return arr.dump(indent) + "\n";
}

std::string inference_csv_header() {
  return "estimator,variance,lambda_hat,tau_at_0,se_at_lambda_hat,df,alpha,p_value_at_0,"
         "interval_type,interval_lo,interval_hi\n";
}

std::string inference_csv_row(const InferenceResult& r) {
  std::string row = r.estimator + "," + r.variance + "," + format_double(r.lambda_hat) + "," +
                    format_double(r.tau_at_0) + "," + format_double(r.se_at_lambda_hat) + "," +
                    format_double(r.df) + "," + format_double(r.alpha) + "," +
                    format_double(r.p_value_at_0) + "," + interval_type_name(r.interval.kind());
  switch (r.interval.kind()) {
    case IntervalSet::Kind::Bounded:
    case IntervalSet::Kind::TwoRays:
    case IntervalSet::Kind::Point:
      row += "," + format_double(r.interval.lo()) + "," + format_double(r.interval.hi());
      break;
    case IntervalSet::Kind::WholeLine:
    case IntervalSet::Kind::Empty:
      row += ",,";
      break;
  }
  return row + "\n";
}

std::string grid_results_csv(const std::vector<SimReport>& reports) {
  std::string out = "scenario,method,metric,value\n";
  for (const SimReport& report : reports) {
    for (const MethodTally& tally : report.methods) {
      const std::pair<const char*, double> metrics[] = {
          {"bias", tally.bias()},
          {"mse", tally.mse()},
          {"type.I", tally.type_i_rate()},
          {"power", tally.power()},
      };
      for (const auto& [label, value] : metrics) {
        out += report.scenario + "," + tally.method + "," + label + "," + format_double(value) +
               "\n";
      }
    }
  }
  return out;
}

std::string grid_results_json_text(const std::vector<SimReport>& reports, int indent) {
  json arr = json::array();
  for (const SimReport& report : reports) {
    json j;
    j["scenario"] = report.scenario;
    j["reps"] = report.reps;
    j["alpha"] = report.alpha;
    j["mean_true_lambda"] = number_or_null(report.mean_true_lambda);
    j["mean_true_tau"] = number_or_null(report.mean_true_tau);
    j["mean_compliance"] = number_or_null(report.mean_compliance);
    j["true_lambda"] = report.true_lambda;
    j["true_tau"] = report.true_tau;
    j["compliance_rate"] = report.compliance_rate;
    json methods = json::array();
    for (const MethodTally& tally : report.methods) methods.push_back(tally_to_json(tally));
    j["methods"] = methods;
    arr.push_back(j);
  }
  return arr.dump(indent) + "\n";
}

std::string manifest_json_text(const std::string& command, const std::string& config_json_text,
                               int indent) {
  json j;
  j["tool"] = "swedge";
  j["version"] = kToolVersion;
  j["command"] = command;
  try {
    j["config"] = json::parse(config_json_text);
  } catch (const json::parse_error&) {
    j["config"] = config_json_text;
  }
  json versions;
  versions["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION);
  versions["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  versions["compiler"] = __VERSION__;
  j["versions"] = versions;
  return j.dump(indent) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << content;
  if (!out) throw std::runtime_error("failed while writing: " + path);
}

}  // namespace swedge
