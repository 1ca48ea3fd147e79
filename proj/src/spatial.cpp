#include "sptsae/spatial.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "csv_util.hpp"
#include "sptsae/errors.hpp"

namespace spt {

namespace {

std::vector<std::string> default_labels(int d) {
  std::vector<std::string> out;
  out.reserve(d);
  for (int i = 1; i <= d; ++i) out.push_back(std::to_string(i));
  return out;
}

std::map<std::string, int> label_index(const std::vector<std::string>& labels) {
  std::map<std::string, int> index;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (!index.emplace(labels[i], i).second) throw DataError(fmt::format("duplicate domain label '{}'", labels[i]));
  }
  return index;
}

void check_distance_matrix(const Eigen::MatrixXd& dist) {
  if (dist.rows() != dist.cols() || dist.rows() < 2) throw DataError("distance matrix must be square with D >= 2");
  const Eigen::Index d = dist.rows();
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i == j) continue;
      if (!(dist(i, j) > 0.0) || !std::isfinite(dist(i, j)))
        throw DataError(fmt::format("distance between domains {} and {} must be positive, got {}", i + 1, j + 1,
                                    dist(i, j)));
      if (dist(i, j) != dist(j, i))
        throw DataError(fmt::format("distance matrix is not symmetric at ({}, {})", i + 1, j + 1));
    }
  }
}

}  // namespace

Eigen::MatrixXd row_standardize(const Eigen::MatrixXd& w0) {
  Eigen::MatrixXd w = w0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double s = w.row(i).sum();
    if (!(s > 0.0)) throw DataError(fmt::format("domain {} has no neighbours (zero row in proximity matrix)", i + 1));
    w.row(i) /= s;
  }
  return w;
}

ProximityMatrix ProximityMatrix::from_raw(Eigen::MatrixXd w0, std::vector<std::string> labels) {
  if (w0.rows() != w0.cols() || w0.rows() < 1) throw DataError("proximity matrix must be square and nonempty");
  const int d = static_cast<int>(w0.rows());
  if (labels.empty()) labels = default_labels(d);
  if (static_cast<int>(labels.size()) != d) throw DataError("proximity labels do not match matrix size");
  label_index(labels);
  for (int i = 0; i < d; ++i) {
    if (w0(i, i) != 0.0) throw DataError(fmt::format("proximity diagonal must be zero (domain '{}')", labels[i]));
    for (int j = 0; j < d; ++j) {
      if (!(w0(i, j) >= 0.0) || !std::isfinite(w0(i, j)))
        throw DataError(fmt::format("proximity entries must be finite and nonnegative ({}, {})", i + 1, j + 1));
    }
    if (!(w0.row(i).sum() > 0.0)) throw DataError(fmt::format("domain '{}' is isolated (no neighbours)", labels[i]));
  }
  Eigen::MatrixXd w = row_standardize(w0);
  return ProximityMatrix(std::move(w0), std::move(w), std::move(labels));
}

ProximityMatrix ProximityMatrix::permuted(std::span<const int> order) const {
  const int d = size();
  if (static_cast<int>(order.size()) != d) throw DataError("permutation size mismatch");
  Eigen::MatrixXd w0(d, d);
  std::vector<std::string> labels(d);
  for (int i = 0; i < d; ++i) {
    labels[i] = labels_[order[i]];
    for (int j = 0; j < d; ++j) w0(i, j) = w0_(order[i], order[j]);
  }
  return from_raw(std::move(w0), std::move(labels));
}

ProximityMatrix ProximityMatrix::aligned_to(const std::vector<std::string>& labels) const {
  if (static_cast<int>(labels.size()) != size())
    throw DataError(fmt::format("proximity matrix has {} domains, data has {}", size(), labels.size()));
  const auto index = label_index(labels_);
  std::vector<int> order;
  order.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = index.find(l);
    if (it == index.end()) throw DataError(fmt::format("domain '{}' missing from proximity matrix", l));
    order.push_back(it->second);
  }
  return permuted(order);
}

ProximityMatrix build_adjacency_proximity(const std::vector<std::pair<std::string, std::string>>& edges,
                                          const std::vector<std::string>& labels) {
  const auto index = label_index(labels);
  const int d = static_cast<int>(labels.size());
  Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [a, b] : edges) {
    auto ia = index.find(a);
    auto ib = index.find(b);
    if (ia == index.end()) throw DataError(fmt::format("edge references unknown domain '{}'", a));
    if (ib == index.end()) throw DataError(fmt::format("edge references unknown domain '{}'", b));
    if (ia->second == ib->second) throw DataError(fmt::format("self-edge on domain '{}'", a));
    w0(ia->second, ib->second) = 1.0;
    w0(ib->second, ia->second) = 1.0;
  }
  return ProximityMatrix::from_raw(std::move(w0), labels);
}

ProximityMatrix build_distance_proximity(const Eigen::MatrixXd& dist, std::vector<std::string> labels) {
  check_distance_matrix(dist);
  const Eigen::Index d = dist.rows();
  Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      if (i != j) w0(i, j) = 1.0 / dist(i, j);
  return ProximityMatrix::from_raw(std::move(w0), std::move(labels));
}

ProximityMatrix build_knn_proximity(const Eigen::MatrixXd& dist, int k, std::vector<std::string> labels) {
  if (dist.rows() != dist.cols()) throw DataError("distance matrix must be square");
  const int d = static_cast<int>(dist.rows());
  if (k < 1 || k >= d) throw DataError(fmt::format("k must satisfy 1 <= k < D (k={}, D={})", k, d));
  check_distance_matrix(dist);
  Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(d, d);
  std::vector<int> others;
  for (int i = 0; i < d; ++i) {
    others.clear();
    for (int j = 0; j < d; ++j)
      if (j != i) others.push_back(j);
    // stable sort keeps the smaller index first among equal distances
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) { return dist(i, a) < dist(i, b); });
    for (int n = 0; n < k; ++n) w0(i, others[n]) = 1.0;
  }
  return ProximityMatrix::from_raw(std::move(w0), std::move(labels));
}

ProximityMatrix build_seven_diagonal(int d) {
  if (d < 7) throw DataError(fmt::format("seven-diagonal matrix needs D >= 7, got {}", d));
  constexpr double numerators[] = {0.0, 5.0, 2.0, 1.0};
  Eigen::MatrixXd w0 = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = std::max(0, i - 3); j <= std::min(d - 1, i + 3); ++j) w0(i, j) = numerators[std::abs(i - j)];
  return ProximityMatrix::from_raw(std::move(w0));
}

SarCovariance::SarCovariance(const ProximityMatrix& w, double rho) : rho_(rho), w_(w.w()) {
  if (!(rho > -1.0 && rho < 1.0)) throw NumericalError(fmt::format("rho must lie in (-1, 1), got {}", rho));
  const Eigen::Index d = w_.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd a = eye - rho * w_;
  const Eigen::MatrixXd c = a.transpose() * a;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) throw NumericalError(fmt::format("I - rho W is singular at rho = {}", rho));
  const Eigen::VectorXd l_diag = llt.matrixLLT().diagonal();
  if (l_diag.minCoeff() <= 1e-7 * l_diag.maxCoeff())
    throw NumericalError(fmt::format("I - rho W is numerically singular at rho = {}", rho));
  gamma_ = llt.solve(eye);
  gamma_ = 0.5 * (gamma_ + gamma_.transpose()).eval();
  const Eigen::MatrixXd c_dot = -(w_.transpose() * a) - a.transpose() * w_;
  gamma_dot_ = -(gamma_ * c_dot * gamma_);
  gamma_dot_ = 0.5 * (gamma_dot_ + gamma_dot_.transpose()).eval();
  a_lu_.compute(a);
}

Eigen::MatrixXd SarCovariance::apply_inverse(const Eigen::MatrixXd& u) const { return a_lu_.solve(u); }

Eigen::VectorXd sample_sar(const SarCovariance& cov, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd u(cov.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = normal(rng);
  if (cov.rho() == 0.0) return u;
  return cov.apply_inverse(u);
}

ConditionalMoments conditional_sar_moments(const SarCovariance& cov, int d1, int d2) {
  if (d1 == d2) throw DataError("conditional SAR moments need two distinct domains");
  if (d1 < 0 || d2 < 0 || d1 >= cov.size() || d2 >= cov.size()) throw DataError("domain index out of range");
  const auto& g = cov.gamma();
  const double coef = g(d1, d2) / g(d1, d1);
  const double var = std::max(0.0, g(d2, d2) - g(d1, d2) * g(d1, d2) / g(d1, d1));
  return {coef, var};
}

double morans_i(std::span<const double> values, const Eigen::MatrixXd& w) {
  const auto d = static_cast<Eigen::Index>(values.size());
  if (w.rows() != d || w.cols() != d) throw DataError("Moran's I: weight matrix does not match value count");
  const Eigen::Map<const Eigen::VectorXd> v(values.data(), d);
  const Eigen::VectorXd z = v.array() - v.mean();
  const double ss = z.squaredNorm();
  if (!(ss > 0.0)) throw NumericalError("Moran's I undefined: values have zero variance");
  const double s0 = w.sum();
  return static_cast<double>(d) / s0 * z.dot(w * z) / ss;
}

double morans_i(std::span<const double> values, const ProximityMatrix& w) { return morans_i(values, w.w()); }

std::vector<std::pair<std::string, std::string>> read_adjacency_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("{}: cannot open adjacency file", path));
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw DataError(fmt::format("{}: line {}: expected 'id1,id2'", path, lineno));
    edges.emplace_back(fields[0], fields[1]);
  }
  return edges;
}

std::pair<Eigen::MatrixXd, std::vector<std::string>> read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("{}: cannot open matrix file", path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(fmt::format("{}: empty file", path));
  auto header = detail::split_csv_line(detail::trim(line));
  if (header.size() < 2) throw DataError(fmt::format("{}: line 1: header needs domain ids", path));
  std::vector<std::string> labels(header.begin() + 1, header.end());
  const int d = static_cast<int>(labels.size());
  Eigen::MatrixXd m(d, d);
  int row = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != d + 1)
      throw DataError(fmt::format("{}: line {}: expected {} fields, got {}", path, lineno, d + 1, fields.size()));
    if (row >= d) throw DataError(fmt::format("{}: line {}: more rows than header columns", path, lineno));
    if (fields[0] != labels[row])
      throw DataError(fmt::format("{}: line {}: row id '{}' does not match column id '{}'", path, lineno, fields[0],
                                  labels[row]));
    for (int j = 0; j < d; ++j) {
      auto v = detail::parse_double(fields[j + 1]);
      if (!v) throw DataError(fmt::format("{}: line {}: '{}' is not a number", path, lineno, fields[j + 1]));
      m(row, j) = *v;
    }
    ++row;
  }
  if (row != d) throw DataError(fmt::format("{}: expected {} rows, got {}", path, d, row));
  return {m, labels};
}

std::string proximity_csv(const ProximityMatrix& w) {
  std::string out = "domain";
  for (const auto& l : w.labels()) out += "," + l;
  out += "\n";
  for (int i = 0; i < w.size(); ++i) {
    out += w.labels()[i];
    for (int j = 0; j < w.size(); ++j) out += fmt::format(",{:.17g}", w.w()(i, j));
    out += "\n";
  }
  return out;
}

void write_proximity_csv(const std::string& path, const ProximityMatrix& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("{}: cannot open for writing", path));
  out << proximity_csv(w);
}

}  // namespace spt
