// SPDX-License-Identifier: MIT

#include "swedge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "swedge/numio.hpp"

namespace swedge {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string row_label(std::size_t line) { return "row " + std::to_string(line); }

}  // namespace

TrialDataset::TrialDataset(StepWedgeDesign design, int covariate_count)
    : design_(std::move(design)), p_(covariate_count) {
  design_.validate();
  if (p_ < 0) fail("covariate count must be nonnegative");
}

void TrialDataset::append(long long cluster_id, int period, int z, int d, double y,
                          const double* x_row) {
  raw_cluster_.push_back(cluster_id);
  period_.push_back(period);
  z_.push_back(static_cast<std::int8_t>(z));
  d_.push_back(static_cast<std::int8_t>(d));
  y_.push_back(y);
  x_.insert(x_.end(), x_row, x_row + p_);
  source_line_.push_back(y_.size());  // default label; CSV loader overwrites
}

void TrialDataset::finalize() {
  if (finalized_) return;
  const std::size_t n = y_.size();
  if (n == 0) fail("dataset has no rows");

  // Per-row field validation first, so messages point at concrete rows.
  for (std::size_t r = 0; r < n; ++r) {
    const std::string at = row_label(source_line_[r]);
    if (period_[r] < 0 || period_[r] > design_.post_period()) {
      fail(at + ": period " + std::to_string(period_[r]) + " outside 0.." +
           std::to_string(design_.post_period()));
    }
    if (z_[r] != 0 && z_[r] != 1) fail(at + ": z must be 0 or 1");
    if (d_[r] != 0 && d_[r] != 1) fail(at + ": d must be 0 or 1");
    if (!std::isfinite(y_[r])) fail(at + ": outcome y is not finite");
    for (int c = 0; c < p_; ++c) {
      if (!std::isfinite(x_[r * static_cast<std::size_t>(p_) + static_cast<std::size_t>(c)])) {
        fail(at + ": covariate x" + std::to_string(c + 1) + " is not finite");
      }
    }
  }

  // Map external cluster ids to dense indices (sorted id order).
  cluster_ids_ = raw_cluster_;
  std::sort(cluster_ids_.begin(), cluster_ids_.end());
  cluster_ids_.erase(std::unique(cluster_ids_.begin(), cluster_ids_.end()), cluster_ids_.end());
  if (static_cast<int>(cluster_ids_.size()) != design_.clusters) {
    fail("dataset has " + std::to_string(cluster_ids_.size()) +
         " distinct clusters but the design has " + std::to_string(design_.clusters));
  }
  cluster_index_.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto it = std::lower_bound(cluster_ids_.begin(), cluster_ids_.end(), raw_cluster_[r]);
    cluster_index_[r] = static_cast<int>(it - cluster_ids_.begin());
  }

  // z must be constant within each cluster-period and follow a staircase:
  // once treated, always treated; control in period 0, treated in J+1.
  const int periods = design_.total_periods();
  const std::size_t cells = static_cast<std::size_t>(design_.clusters) * periods;
  std::vector<std::int8_t> cell_z(cells, -1);
  std::vector<std::size_t> cell_first_row(cells, 0);
  cell_counts_.assign(cells, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t k =
        static_cast<std::size_t>(cluster_index_[r]) * periods + static_cast<std::size_t>(period_[r]);
    if (cell_z[k] == -1) {
      cell_z[k] = z_[r];
      cell_first_row[k] = source_line_[r];
    } else if (cell_z[k] != z_[r]) {
      fail(row_label(source_line_[r]) + ": cluster " + std::to_string(raw_cluster_[r]) +
           " has conflicting z values in period " + std::to_string(period_[r]) +
           " (first seen at " + row_label(cell_first_row[k]) + ")");
    }
    ++cell_counts_[k];
  }

  std::vector<int> adoption(static_cast<std::size_t>(design_.clusters));
  for (int i = 0; i < design_.clusters; ++i) {
    int last_control = 0;                      // period 0 is control by definition
    int first_treated = design_.post_period();  // period J+1 is treated by definition
    for (int j = 0; j <= design_.post_period(); ++j) {
      const std::int8_t zz = cell_z[static_cast<std::size_t>(i) * periods + static_cast<std::size_t>(j)];
      if (zz == 0) last_control = std::max(last_control, j);
      if (zz == 1) first_treated = std::min(first_treated, j);
    }
    if (cell_z[static_cast<std::size_t>(i) * periods] == 1) {
      fail("cluster " + std::to_string(cluster_ids_[static_cast<std::size_t>(i)]) +
           " is marked treated in period 0");
    }
    if (cell_z[static_cast<std::size_t>(i) * periods + static_cast<std::size_t>(design_.post_period())] == 0) {
      fail("cluster " + std::to_string(cluster_ids_[static_cast<std::size_t>(i)]) +
           " is marked control in period " + std::to_string(design_.post_period()));
    }
    if (last_control >= first_treated) {
      fail("non-staggered assignment: cluster " +
           std::to_string(cluster_ids_[static_cast<std::size_t>(i)]) +
           " switches back to control after being treated (control in period " +
           std::to_string(last_control) + ", treated in period " + std::to_string(first_treated) +
           "); z is not consistent with any assignment");
    }
    if (last_control + 1 != first_treated) {
      fail("cluster " + std::to_string(cluster_ids_[static_cast<std::size_t>(i)]) +
           " has no records between periods " + std::to_string(last_control) + " and " +
           std::to_string(first_treated) +
           ", so its adoption time is ambiguous; z is not consistent with exactly one assignment");
    }
    adoption[static_cast<std::size_t>(i)] = first_treated;
  }
  assignment_.adoption = std::move(adoption);
  assignment_.rollout_periods = design_.rollout_periods;
  assignment_.validate_against(design_);

  rollout_count_ = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (period_[r] >= 1 && period_[r] <= design_.rollout_periods) ++rollout_count_;
  }
  raw_cluster_.clear();
  raw_cluster_.shrink_to_fit();
  finalized_ = true;
}

TrialDataset TrialDataset::from_records(const StepWedgeDesign& design, int covariate_count,
                                        const std::vector<TrialRecord>& records) {
  TrialDataset out(design, covariate_count);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const TrialRecord& rec = records[r];
    if (static_cast<int>(rec.x.size()) != covariate_count) {
      fail(row_label(r + 1) + ": expected " + std::to_string(covariate_count) +
           " covariates, got " + std::to_string(rec.x.size()));
    }
    out.append(rec.cluster, rec.period, rec.z, rec.d, rec.y, rec.x.data());
  }
  out.finalize();
  return out;
}

long long TrialDataset::cell_count(int cluster_index, int period) const {
  return cell_counts_[static_cast<std::size_t>(cluster_index) * design_.total_periods() +
                      static_cast<std::size_t>(period)];
}

long long TrialDataset::period_count(int period) const {
  long long total = 0;
  for (int i = 0; i < design_.clusters; ++i) total += cell_count(i, period);
  return total;
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace

TrialDataset TrialDataset::parse_csv(const std::string& text, const StepWedgeDesign& design,
                                     const std::string& origin) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& out) -> bool {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    out = std::string_view(text).substr(pos, end - pos);
    if (!out.empty() && out.back() == '\r') out.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) fail(origin + ": empty file");
  const auto head_fields = split_csv_line(header);
  const char* fixed[] = {"cluster", "period", "z", "d", "y"};
  if (head_fields.size() < 5) fail(origin + ": header must start with cluster,period,z,d,y");
  for (std::size_t i = 0; i < 5; ++i) {
    if (head_fields[i] != fixed[i]) {
      fail(origin + ": header field " + std::to_string(i + 1) + " must be \"" + fixed[i] +
           "\", got \"" + std::string(head_fields[i]) + "\"");
    }
  }
  const int p = static_cast<int>(head_fields.size()) - 5;
  for (int c = 0; c < p; ++c) {
    const std::string want = "x" + std::to_string(c + 1);
    if (head_fields[static_cast<std::size_t>(5 + c)] != want) {
      fail(origin + ": covariate header field must be \"" + want + "\", got \"" +
           std::string(head_fields[static_cast<std::size_t>(5 + c)]) + "\"");
    }
  }

  TrialDataset out(design, p);
  std::vector<double> xrow(static_cast<std::size_t>(p));
  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) {
      if (pos >= text.size()) break;  // trailing newline
      fail(origin + ", " + row_label(line_no) + ": empty line");
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != head_fields.size()) {
      fail(origin + ", " + row_label(line_no) + ": expected " +
           std::to_string(head_fields.size()) + " fields, got " + std::to_string(fields.size()));
    }
    std::int64_t cluster = 0;
    std::int64_t period = 0;
    std::int64_t z = 0;
    std::int64_t d = 0;
    double y = 0.0;
    if (!parse_int64(fields[0], cluster)) {
      fail(origin + ", " + row_label(line_no) + ": bad cluster id \"" + std::string(fields[0]) + "\"");
    }
    if (!parse_int64(fields[1], period)) {
      fail(origin + ", " + row_label(line_no) + ": bad period \"" + std::string(fields[1]) + "\"");
    }
    if (!parse_int64(fields[2], z) || (z != 0 && z != 1)) {
      fail(origin + ", " + row_label(line_no) + ": z must be 0 or 1, got \"" +
           std::string(fields[2]) + "\"");
    }
    if (!parse_int64(fields[3], d) || (d != 0 && d != 1)) {
      fail(origin + ", " + row_label(line_no) + ": d must be 0 or 1, got \"" +
           std::string(fields[3]) + "\"");
    }
    if (!parse_double(fields[4], y)) {
      fail(origin + ", " + row_label(line_no) + ": bad y \"" + std::string(fields[4]) + "\"");
    }
    for (int c = 0; c < p; ++c) {
      if (!parse_double(fields[static_cast<std::size_t>(5 + c)], xrow[static_cast<std::size_t>(c)])) {
        fail(origin + ", " + row_label(line_no) + ": bad x" + std::to_string(c + 1) + " \"" +
             std::string(fields[static_cast<std::size_t>(5 + c)]) + "\"");
      }
    }
    out.append(cluster, static_cast<int>(period), static_cast<int>(z), static_cast<int>(d), y,
               xrow.data());
    out.source_line_.back() = line_no;
  }
  try {
    out.finalize();
  } catch (const std::invalid_argument& e) {
    fail(origin + ": " + e.what());
  }
  return out;
}

TrialDataset TrialDataset::load_csv(const std::string& path, const StepWedgeDesign& design) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open data file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), design, path);
}

std::string TrialDataset::to_csv() const {
  std::string out = "cluster,period,z,d,y";
  for (int c = 0; c < p_; ++c) out += ",x" + std::to_string(c + 1);
  out += '\n';
  for (std::size_t r = 0; r < rows(); ++r) {
    out += std::to_string(cluster_id(r));
    out += ',';
    out += std::to_string(period_[r]);
    out += ',';
    out += char('0' + z_[r]);
    out += ',';
    out += char('0' + d_[r]);
    out += ',';
    out += format_double(y_[r]);
    for (int c = 0; c < p_; ++c) {
      out += ',';
      out += format_double(x_[r * static_cast<std::size_t>(p_) + static_cast<std::size_t>(c)]);
    }
    out += '\n';
  }
  return out;
}

void TrialDataset::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write data file: " + path);
  out << to_csv();
}

ResidualizedView::ResidualizedView(const TrialDataset& data)
    : design_(&data.design()), assignment_(&data.assignment()) {
  const std::size_t cells =
      static_cast<std::size_t>(design_->clusters) * design_->total_periods();
  yt_.assign(cells, 0.0);
  dt_.assign(cells, 0.0);
  counts_.assign(cells, 0);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const std::size_t k = idx(data.cluster_index(r), data.period(r));
    yt_[k] += data.y(r);
    dt_[k] += data.d(r);
    ++counts_[k];
  }
  n_ = data.rollout_count();
}

PotentialOutcomeTable::PotentialOutcomeTable(StepWedgeDesign design, int covariate_count)
    : design_(std::move(design)), p_(covariate_count) {
  design_.validate();
}

void PotentialOutcomeTable::append(int cluster_index, int period, double y1, double y0, int d1,
                                   int d0, const double* x_row) {
  cluster_.push_back(cluster_index);
  period_.push_back(period);
  y1_.push_back(y1);
  y0_.push_back(y0);
  d1_.push_back(static_cast<std::int8_t>(d1));
  d0_.push_back(static_cast<std::int8_t>(d0));
  if (p_ > 0) x_.insert(x_.end(), x_row, x_row + p_);
}

void PotentialOutcomeTable::validate() const {
  for (std::size_t r = 0; r < rows(); ++r) {
    if (cluster_[r] < 0 || cluster_[r] >= design_.clusters) {
      fail(row_label(r + 1) + ": cluster index outside design");
    }
    if (period_[r] < 0 || period_[r] > design_.post_period()) {
      fail(row_label(r + 1) + ": period outside design");
    }
    if (d1_[r] < d0_[r]) {
      fail(row_label(r + 1) + ": monotonicity violated (d(1) = 0 but d(0) = 1)");
    }
    if (d1_[r] == d0_[r] && y1_[r] != y0_[r]) {
      fail(row_label(r + 1) +
           ": exclusion restriction violated (assignment shifts y without shifting d)");
    }
  }
}

TrialDataset PotentialOutcomeTable::materialize(const AssignmentRealization& assignment) const {
  assignment.validate_against(design_);
  TrialDataset out(design_, p_);
  static const double no_x = 0.0;
  for (std::size_t r = 0; r < rows(); ++r) {
    const int z = assignment.z(cluster_[r], period_[r]);
    const double y = z ? y1_[r] : y0_[r];
    const int d = z ? d1_[r] : d0_[r];
    out.append(cluster_[r], period_[r], z, d, y, p_ > 0 ? x_row(r) : &no_x);
  }
  out.finalize();
  return out;
}

TrueEstimands true_estimands(const PotentialOutcomeTable& table) {
  double tau_y = 0.0;
  double tau_d = 0.0;
  long long n = 0;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const int j = table.period(r);
    if (j < 1 || j > table.design().rollout_periods) continue;
    tau_y += table.y1(r) - table.y0(r);
    tau_d += table.d1(r) - table.d0(r);
    ++n;
  }
  if (n == 0) fail("potential-outcome table has no rollout rows");
  if (tau_d == 0.0) {
    throw std::domain_error(
        "relevance violated: treatment received never responds to assignment (tau_D = 0)");
  }
  TrueEstimands e;
  e.tau = tau_y / static_cast<double>(n);
  e.compliance_rate = tau_d / static_cast<double>(n);
  e.lambda = tau_y / tau_d;
  return e;
}

}  // namespace swedge
