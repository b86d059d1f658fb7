// SPDX-License-Identifier: MIT
// Clustered least squares with CR0/CR3 sandwich machinery. Shared by the
// regression estimators and the duration diagnostics so that every
// cluster-robust variance in the library goes through one reducer.

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace swedge {

// A fixed design matrix whose rows belong to clusters. Solving for several
// responses reuses one factorization; the CR3 leave-one-cluster-out
// adjustment maps are likewise computed once and shared across responses.
//
// Cluster indices are dense 0..C-1 but rows may appear in any order.
// Column and cluster labels only feed error messages.
class ClusteredDesignMatrix {
 public:
  ClusteredDesignMatrix(Eigen::MatrixXd x, std::vector<int> cluster_of_row, int cluster_count,
                        std::vector<std::string> column_names,
                        std::vector<std::string> cluster_labels);

  Eigen::Index rows() const { return x_.rows(); }
  Eigen::Index cols() const { return x_.cols(); }
  int cluster_count() const { return cluster_count_; }
  const Eigen::MatrixXd& x() const { return x_; }
  const std::vector<int>& cluster_of_row() const { return cluster_of_row_; }
  const std::vector<std::string>& column_names() const { return column_names_; }

  // Least-squares coefficients. Throws std::runtime_error when the matrix is
  // rank deficient, naming the collinear columns.
  Eigen::VectorXd solve(const Eigen::VectorXd& y) const;

  // Per-cluster score vectors t_c = X_c' e_c with e = y - X beta.
  std::vector<Eigen::VectorXd> cluster_scores(const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& beta) const;

  // CR3 scores u_c = X_c' (I - H_cc)^{-1} e_c, computed without forming the
  // hat block: u_c = t_c + S_c (A - S_c)^{-1} t_c with A = X'X, S_c = X_c'X_c.
  // Throws std::runtime_error "CR3 adjustment singular for cluster <label>"
  // when A - S_c is singular, i.e. the design loses rank once the cluster
  // is left out.
  std::vector<Eigen::VectorXd> cluster_scores_cr3(const Eigen::VectorXd& y,
                                                  const Eigen::VectorXd& beta) const;

  // v = (X'X)^{-1} w, the bread applied to a contrast.
  Eigen::VectorXd bread_solve(const Eigen::VectorXd& w) const;

 private:
  void require_full_rank() const;
  void build_cr3_maps() const;

  Eigen::MatrixXd x_;
  std::vector<int> cluster_of_row_;
  int cluster_count_ = 0;
  std::vector<std::string> column_names_;
  std::vector<std::string> cluster_labels_;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
  Eigen::LLT<Eigen::MatrixXd> gram_llt_;  // factorization of A = X'X
  Eigen::MatrixXd gram_;                  // A itself, needed for A - S_c

  // Lazily built per-cluster maps M_c = S_c (A - S_c)^{-1}; response free.
  mutable std::vector<Eigen::MatrixXd> cr3_maps_;
  mutable bool cr3_ready_ = false;
};

// Sandwich variance of a contrast: Var(w'beta) = sum_c (v . s_c)^2 where
// v = (bread) w and s_c are the per-cluster scores (plain or CR3-adjusted).
double contrast_variance(const Eigen::VectorXd& v, const std::vector<Eigen::VectorXd>& scores);

}  // namespace swedge
