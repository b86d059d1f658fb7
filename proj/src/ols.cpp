// SPDX-License-Identifier: MIT

#include "swedge/ols.hpp"

#include <stdexcept>
#include <utility>

namespace swedge {

ClusteredDesignMatrix::ClusteredDesignMatrix(Eigen::MatrixXd x, std::vector<int> cluster_of_row,
                                             int cluster_count,
                                             std::vector<std::string> column_names,
                                             std::vector<std::string> cluster_labels)
    : x_(std::move(x)),
      cluster_of_row_(std::move(cluster_of_row)),
      cluster_count_(cluster_count),
      column_names_(std::move(column_names)),
      cluster_labels_(std::move(cluster_labels)) {
  if (static_cast<Eigen::Index>(cluster_of_row_.size()) != x_.rows())
    throw std::invalid_argument("cluster index length does not match row count");
  if (static_cast<Eigen::Index>(column_names_.size()) != x_.cols())
    throw std::invalid_argument("column name count does not match design width");
  if (static_cast<int>(cluster_labels_.size()) != cluster_count_)
    throw std::invalid_argument("cluster label count does not match cluster count");
  for (int c : cluster_of_row_)
    if (c < 0 || c >= cluster_count_)
      throw std::invalid_argument("row assigned to cluster index out of range");

  qr_.compute(x_);
  require_full_rank();
  gram_ = x_.transpose() * x_;
  gram_llt_.compute(gram_);
  if (gram_llt_.info() != Eigen::Success)
    throw std::runtime_error("normal equations not positive definite despite full column rank");
}

void ClusteredDesignMatrix::require_full_rank() const {
  const Eigen::Index rank = qr_.rank();
  if (rank == x_.cols()) return;
  // Columns pivoted past the numerical rank are the ones expressible through
  // the columns pivoted before them.
  const auto& perm = qr_.colsPermutation().indices();
  std::string culprits;
  for (Eigen::Index k = rank; k < x_.cols(); ++k) {
    if (!culprits.empty()) culprits += ", ";
    culprits += column_names_[static_cast<std::size_t>(perm[k])];
  }
  throw std::runtime_error("design matrix is rank deficient (rank " + std::to_string(rank) +
                           " of " + std::to_string(x_.cols()) +
                           "); collinear columns: " + culprits);
}

Eigen::VectorXd ClusteredDesignMatrix::solve(const Eigen::VectorXd& y) const {
  if (y.size() != x_.rows()) throw std::invalid_argument("response length does not match row count");
  return qr_.solve(y);
}

std::vector<Eigen::VectorXd> ClusteredDesignMatrix::cluster_scores(
    const Eigen::VectorXd& y, const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd resid = y - x_ * beta;
  std::vector<Eigen::VectorXd> scores(static_cast<std::size_t>(cluster_count_),
                                      Eigen::VectorXd::Zero(x_.cols()));
  for (Eigen::Index r = 0; r < x_.rows(); ++r)
    scores[static_cast<std::size_t>(cluster_of_row_[static_cast<std::size_t>(r)])] +=
        resid[r] * x_.row(r).transpose();
  return scores;
}

void ClusteredDesignMatrix::build_cr3_maps() const {
  if (cr3_ready_) return;
  const Eigen::Index p = x_.cols();
  std::vector<Eigen::MatrixXd> grams(static_cast<std::size_t>(cluster_count_),
                                     Eigen::MatrixXd::Zero(p, p));
  for (Eigen::Index r = 0; r < x_.rows(); ++r) {
    auto& s = grams[static_cast<std::size_t>(cluster_of_row_[static_cast<std::size_t>(r)])];
    s.noalias() += x_.row(r).transpose() * x_.row(r);
  }
  cr3_maps_.assign(static_cast<std::size_t>(cluster_count_), Eigen::MatrixXd());
  for (int c = 0; c < cluster_count_; ++c) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram_ - grams[static_cast<std::size_t>(c)]);
    if (!lu.isInvertible())
      throw std::runtime_error("CR3 adjustment singular for cluster " +
                               cluster_labels_[static_cast<std::size_t>(c)]);
    cr3_maps_[static_cast<std::size_t>(c)] =
        grams[static_cast<std::size_t>(c)] * lu.inverse();
  }
  cr3_ready_ = true;
}

std::vector<Eigen::VectorXd> ClusteredDesignMatrix::cluster_scores_cr3(
    const Eigen::VectorXd& y, const Eigen::VectorXd& beta) const {
  build_cr3_maps();
  std::vector<Eigen::VectorXd> scores = cluster_scores(y, beta);
  for (int c = 0; c < cluster_count_; ++c) {
    auto& t = scores[static_cast<std::size_t>(c)];
    t += cr3_maps_[static_cast<std::size_t>(c)] * t;
  }
  return scores;
}

Eigen::VectorXd ClusteredDesignMatrix::bread_solve(const Eigen::VectorXd& w) const {
  if (w.size() != x_.cols()) throw std::invalid_argument("contrast length does not match design width");
  return gram_llt_.solve(w);
}

double contrast_variance(const Eigen::VectorXd& v, const std::vector<Eigen::VectorXd>& scores) {
  double total = 0.0;
  for (const auto& s : scores) {
    const double dot = v.dot(s);
    total += dot * dot;
  }
  return total;
}

}  // namespace swedge
