#pragma once

#include <Eigen/Dense>

#include <random>

#include "oracles.hpp"
#include "sptsae/model.hpp"
#include "sptsae/spatial.hpp"

namespace spt::fixture {

// Intercept plus x_dt = (d + t/T)/D (1-based), constant size nu, zero counts.
inline PanelData design(int D, int T, double nu = 100.0) {
  Eigen::MatrixXd x(D * T, 2);
  for (int d = 0; d < D; ++d)
    for (int t = 0; t < T; ++t) {
      x(d * T + t, 0) = 1.0;
      x(d * T + t, 1) = ((d + 1) + static_cast<double>(t + 1) / T) / D;
    }
  return PanelData::make(Eigen::MatrixXd::Zero(D, T), Eigen::MatrixXd::Constant(D, T, nu), x);
}

inline ParamVector theta(double b0, double b1, double phi1, double phi2, double rho) {
  ParamVector t;
  t.beta = Eigen::Vector2d(b0, b1);
  t.phi1 = phi1;
  t.phi2 = phi2;
  t.rho = rho;
  return t;
}

// Counts drawn from the model with an independent sampler (dense Cholesky of gamma).
inline PanelData simulate(const ParamVector& th, PanelData data, const Eigen::MatrixXd& w, std::mt19937_64& g) {
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd l = oracle::sar_gamma(w, th.rho).llt().matrixL();
  Eigen::VectorXd u(data.D);
  for (int d = 0; d < data.D; ++d) u(d) = normal(g);
  const Eigen::VectorXd v1 = l * u;
  for (int d = 0; d < data.D; ++d)
    for (int t = 0; t < data.T; ++t) {
      const double eta = data.x.row(d * data.T + t).dot(th.beta) + th.phi1 * v1(d) + th.phi2 * normal(g);
      data.y(d, t) = static_cast<double>(std::poisson_distribution<long long>(data.nu(d, t) * std::exp(eta))(g));
    }
  return data;
}

}  // namespace spt::fixture
