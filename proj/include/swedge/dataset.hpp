// SPDX-License-Identifier: MIT
// Trial datasets: individual-level records, CSV ingestion/serialization,
// cluster-period aggregation, and potential-outcome tables for simulation
// and design-based testing.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swedge/design.hpp"

namespace swedge {

// One individual-level observation (convenience form; storage is columnar).
struct TrialRecord {
  long long cluster = 0;        // external cluster id, any integers, I of them
  int period = 0;               // 0 .. J+1
  int z = 0;                    // randomized intervention indicator
  int d = 0;                    // treatment received
  double y = 0.0;               // outcome
  std::vector<double> x;        // covariates, fixed width
};

// Validated individual-level dataset tied to a design. Rows are stored
// columnar; covariates are row-major with a fixed stride. On construction
// the dataset checks that every cluster's z column is consistent with
// exactly one assignment realization of the design:
//   * z never switches back to control within a cluster,
//   * z is 0 pre-rollout and 1 post-rollout,
//   * each cluster's adoption period is pinned by its observed records,
//   * cumulative adoption counts match the design's schedule.
class TrialDataset {
 public:
  TrialDataset(StepWedgeDesign design, int covariate_count);

  static TrialDataset from_records(const StepWedgeDesign& design, int covariate_count,
                                   const std::vector<TrialRecord>& records);

  // CSV with mandatory header "cluster,period,z,d,y,x1,...,xp".
  // Floats are written in shortest round-trip form, so load(save(x)) == x
  // bit for bit. Errors name the offending line number.
  static TrialDataset load_csv(const std::string& path, const StepWedgeDesign& design);
  static TrialDataset parse_csv(const std::string& text, const StepWedgeDesign& design,
                                const std::string& origin = "<string>");
  void save_csv(const std::string& path) const;
  std::string to_csv() const;

  // Append one row; call finalize() after the last append.
  void append(long long cluster_id, int period, int z, int d, double y,
              const double* x_row);
  void finalize();

  const StepWedgeDesign& design() const { return design_; }
  int covariate_count() const { return p_; }
  std::size_t rows() const { return y_.size(); }

  long long cluster_id(std::size_t row) const { return cluster_ids_[cluster_index_[row]]; }
  int cluster_index(std::size_t row) const { return cluster_index_[row]; }
  int period(std::size_t row) const { return period_[row]; }
  int z(std::size_t row) const { return z_[row]; }
  int d(std::size_t row) const { return d_[row]; }
  double y(std::size_t row) const { return y_[row]; }
  const double* x_row(std::size_t row) const { return x_.data() + static_cast<std::ptrdiff_t>(row) * p_; }

  // Total individuals in rollout periods 1..J (the N that weights every
  // estimator in this library).
  long long rollout_count() const { return rollout_count_; }
  // Individuals in (cluster index, period) cells; zero when unobserved.
  long long cell_count(int cluster_index, int period) const;
  // Individuals per rollout period, summed over clusters.
  long long period_count(int period) const;

  const AssignmentRealization& assignment() const { return assignment_; }
  const std::vector<long long>& cluster_ids() const { return cluster_ids_; }

 private:
  StepWedgeDesign design_;
  int p_ = 0;
  std::vector<int> cluster_index_;
  std::vector<int> period_;
  std::vector<std::int8_t> z_;
  std::vector<std::int8_t> d_;
  std::vector<double> y_;
  std::vector<double> x_;

  // Populated by finalize().
  std::vector<long long> cluster_ids_;
  std::vector<long long> raw_cluster_;  // pre-finalize external ids per row
  AssignmentRealization assignment_;
  std::vector<long long> cell_counts_;  // I x (J+2)
  long long rollout_count_ = 0;
  bool finalized_ = false;
  std::vector<std::size_t> source_line_;  // for ingestion diagnostics

  friend class CsvReader;
};

// Cluster-period totals of the residualized outcome y - lambda * d. The
// totals are affine in lambda, so the view stores the y and d totals once
// and serves any lambda without another pass over the rows.
class ResidualizedView {
 public:
  explicit ResidualizedView(const TrialDataset& data);

  const StepWedgeDesign& design() const { return *design_; }
  long long rollout_count() const { return n_; }

  double y_total(int cluster_index, int period) const { return yt_[idx(cluster_index, period)]; }
  double d_total(int cluster_index, int period) const { return dt_[idx(cluster_index, period)]; }
  long long cell_count(int cluster_index, int period) const {
    return counts_[idx(cluster_index, period)];
  }
  double residual_total(int cluster_index, int period, double lambda) const {
    const std::size_t k = idx(cluster_index, period);
    return yt_[k] - lambda * dt_[k];
  }
  int z(int cluster_index, int period) const { return assignment_->z(cluster_index, period); }

 private:
  std::size_t idx(int cluster_index, int period) const {
    return static_cast<std::size_t>(cluster_index) *
               static_cast<std::size_t>(design_->total_periods()) +
           static_cast<std::size_t>(period);
  }
  const StepWedgeDesign* design_;
  const AssignmentRealization* assignment_;
  std::vector<double> yt_;
  std::vector<double> dt_;
  std::vector<long long> counts_;
  long long n_ = 0;
};

// Science table for simulations and design-based tests: both potential
// outcomes for every individual. Potential outcomes are indexed by
// treatment received; the table enforces monotonicity (d1 >= d0) and the
// exclusion restriction (y1 == y0 whenever d1 == d0), so materializing under
// an assignment is well defined.
class PotentialOutcomeTable {
 public:
  PotentialOutcomeTable(StepWedgeDesign design, int covariate_count);

  void append(int cluster_index, int period, double y1, double y0, int d1, int d0,
              const double* x_row);
  void validate() const;

  const StepWedgeDesign& design() const { return design_; }
  int covariate_count() const { return p_; }
  std::size_t rows() const { return y1_.size(); }
  int cluster_index(std::size_t r) const { return cluster_[r]; }
  int period(std::size_t r) const { return period_[r]; }
  double y1(std::size_t r) const { return y1_[r]; }
  double y0(std::size_t r) const { return y0_[r]; }
  int d1(std::size_t r) const { return d1_[r]; }
  int d0(std::size_t r) const { return d0_[r]; }
  const double* x_row(std::size_t r) const { return x_.data() + static_cast<std::ptrdiff_t>(r) * p_; }

  // Observed dataset under one realized assignment.
  TrialDataset materialize(const AssignmentRealization& assignment) const;

 private:
  StepWedgeDesign design_;
  int p_ = 0;
  std::vector<int> cluster_;
  std::vector<int> period_;
  std::vector<double> y1_;
  std::vector<double> y0_;
  std::vector<std::int8_t> d1_;
  std::vector<std::int8_t> d0_;
  std::vector<double> x_;
};

struct TrueEstimands {
  double tau = 0.0;              // average effect of assignment on y, rollout
  double lambda = 0.0;           // effect ratio tau_Y / tau_D
  double compliance_rate = 0.0;  // average effect of assignment on d
};

// Finite-population estimands over rollout individuals. Throws
// std::domain_error("relevance violated...") when no individual's treatment
// responds to assignment.
TrueEstimands true_estimands(const PotentialOutcomeTable& table);

}  // namespace swedge
