// SPDX-License-Identifier: MIT
// Serialization of analysis and simulation results: JSON documents, long
// format CSV, aligned text tables, and the reproducibility manifest written
// next to every artifact. Nothing here embeds a timestamp, so rerunning a
// command with the same inputs rewrites the same bytes.

#pragma once

#include <string>
#include <vector>

#include "swedge/ancova.hpp"
#include "swedge/fieller.hpp"
#include "swedge/sim.hpp"

namespace swedge {

// Monospace table with left-aligned, two-space separated columns.
std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);

const char* interval_type_name(IntervalSet::Kind kind);

// One result document per estimator/variance pairing:
//   {estimator, variance, lambda_hat, tau_at_0, se_at_lambda_hat, df, alpha,
//    interval: {type, lo?, hi?}, p_value_at_0}
// Non-finite numbers serialize as null (notably df under the gaussian
// reference and the standard error when the variance estimate is negative at
// the point estimate).
std::string inference_to_json_text(const InferenceResult& result, int indent = 2);
std::string inference_list_to_json_text(const std::vector<InferenceResult>& results,
                                        int indent = 2);

std::string inference_csv_header();
std::string inference_csv_row(const InferenceResult& result);

// Long-format summary of a simulation run: one row per scenario, method,
// and metric, with metric labels bias, mse, type.I, and power.
std::string grid_results_csv(const std::vector<SimReport>& reports);
// Full tallies, including per-replicate estimands and declined counts.
std::string grid_results_json_text(const std::vector<SimReport>& reports, int indent = 2);

// Echo of a run's configuration plus tool and library versions.
std::string manifest_json_text(const std::string& command, const std::string& config_json_text,
                               int indent = 2);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace swedge
