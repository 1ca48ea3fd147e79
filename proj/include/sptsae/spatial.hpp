#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sptsae/rng.hpp"

namespace spt {

// Row-stochastic spatial weight matrix W together with the raw proximities W0
// it was standardized from. Diagonals are zero and entries nonnegative.
class ProximityMatrix {
 public:
  // Validates w0 (square, zero diagonal, nonnegative, no all-zero row) and
  // row-standardizes it. Labels default to "1".."D".
  static ProximityMatrix from_raw(Eigen::MatrixXd w0, std::vector<std::string> labels = {});

  const Eigen::MatrixXd& w0() const { return w0_; }
  const Eigen::MatrixXd& w() const { return w_; }
  const std::vector<std::string>& labels() const { return labels_; }
  int size() const { return static_cast<int>(w_.rows()); }

  // Same matrix with domains reordered so that new domain i is old domain order[i].
  ProximityMatrix permuted(std::span<const int> order) const;
  // Reorders domains to follow `labels`; every label must be present.
  ProximityMatrix aligned_to(const std::vector<std::string>& labels) const;

 private:
  ProximityMatrix(Eigen::MatrixXd w0, Eigen::MatrixXd w, std::vector<std::string> labels)
      : w0_(std::move(w0)), w_(std::move(w)), labels_(std::move(labels)) {}

  Eigen::MatrixXd w0_;
  Eigen::MatrixXd w_;
  std::vector<std::string> labels_;
};

Eigen::MatrixXd row_standardize(const Eigen::MatrixXd& w0);

// Common-border proximities: w0 = 1 for each undirected edge.
ProximityMatrix build_adjacency_proximity(const std::vector<std::pair<std::string, std::string>>& edges,
                                          const std::vector<std::string>& labels);
// Inverse-distance proximities, w0[i][j] = 1 / dist[i][j].
ProximityMatrix build_distance_proximity(const Eigen::MatrixXd& dist, std::vector<std::string> labels = {});
// k nearest neighbours by dist; ties go to the smaller domain index.
ProximityMatrix build_knn_proximity(const Eigen::MatrixXd& dist, int k, std::vector<std::string> labels = {});
// Banded matrix with numerators 5, 2, 1 at lags 1, 2, 3 (interior rows /16).
ProximityMatrix build_seven_diagonal(int d);

// Covariance of the SAR(1) effects v = (I - rho W)^{-1} u, u ~ N(0, I):
// gamma = [(I - rho W)'(I - rho W)]^{-1} and its derivative in rho.
class SarCovariance {
 public:
  SarCovariance(const ProximityMatrix& w, double rho);

  double rho() const { return rho_; }
  int size() const { return static_cast<int>(gamma_.rows()); }
  const Eigen::MatrixXd& gamma() const { return gamma_; }
  const Eigen::MatrixXd& gamma_dot() const { return gamma_dot_; }
  const Eigen::MatrixXd& w() const { return w_; }

  // v = (I - rho W)^{-1} u, column by column.
  Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& u) const;

 private:
  double rho_;
  Eigen::MatrixXd w_;
  Eigen::MatrixXd gamma_;
  Eigen::MatrixXd gamma_dot_;
  Eigen::PartialPivLU<Eigen::MatrixXd> a_lu_;
};

// One draw of the SAR(1) effect vector; consumes D standard normals from rng.
Eigen::VectorXd sample_sar(const SarCovariance& cov, Rng& rng);

struct ConditionalMoments {
  double mean_coefficient;  // E[v_d2 | v_d1] = mean_coefficient * v_d1
  double variance;
};
ConditionalMoments conditional_sar_moments(const SarCovariance& cov, int d1, int d2);

// Global Moran's I of `values` against the weights `w` (row-standardized W or raw W0).
double morans_i(std::span<const double> values, const Eigen::MatrixXd& w);
double morans_i(std::span<const double> values, const ProximityMatrix& w);

// File formats. Adjacency: one `id1,id2` edge per line. Distance / matrix CSV:
// header row and first column carry domain ids.
std::vector<std::pair<std::string, std::string>> read_adjacency_file(const std::string& path);
std::pair<Eigen::MatrixXd, std::vector<std::string>> read_matrix_csv(const std::string& path);
void write_proximity_csv(const std::string& path, const ProximityMatrix& w);
std::string proximity_csv(const ProximityMatrix& w);

}  // namespace spt
