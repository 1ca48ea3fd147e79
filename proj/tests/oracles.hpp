#pragma once

// Independent reference computations for the tests. Nothing here calls the
// moment or predictor code under test; only the data containers are shared.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "sptsae/model.hpp"

namespace spt::oracle {

// Nodes and weights for E[f(Z)], Z ~ N(0, 1), by Golub-Welsch on the
// probabilists' Hermite recurrence. Weights sum to 1.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  Eigen::VectorXd w = es.eigenvectors().row(0).transpose().array().square();
  return {es.eigenvalues(), w / w.sum()};
}

// Covariance of the SAR effects from the definition, by dense inversion.
inline Eigen::MatrixXd sar_gamma(const Eigen::MatrixXd& w, double rho) {
  const Eigen::Index d = w.rows();
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(d, d) - rho * w;
  return (a.transpose() * a).inverse();
}

struct Posterior {
  Eigen::MatrixXd p;   // D x T
  Eigen::VectorXd v1;  // D
  Eigen::MatrixXd v2;  // D x T
};

// Posterior means of p, v1 and v2 given all counts, by a tensor-product
// Gauss-Hermite rule over u ~ N(0, I) with v1 = L u1 (L L' = gamma) and
// v2 = u2. Feasible for D * (T + 1) <= 4 or so.
inline Posterior quadrature_posterior(const ParamVector& th, const PanelData& data, const Eigen::MatrixXd& gamma,
                                      int nodes) {
  const int D = data.D, T = data.T, dim = D + D * T;
  const auto [z, wz] = gauss_hermite(nodes);
  const Eigen::MatrixXd l = gamma.llt().matrixL();
  const Eigen::VectorXd xb = data.x * th.beta;
  std::vector<int> idx(dim, 0);
  long long total = 1;
  for (int i = 0; i < dim; ++i) total *= nodes;

  std::vector<double> logw(total);
  std::vector<Eigen::VectorXd> pts(total);
  Eigen::VectorXd u(dim);
  for (long long n = 0; n < total; ++n) {
    long long r = n;
    double lw = 0.0;
    for (int i = 0; i < dim; ++i) {
      idx[i] = static_cast<int>(r % nodes);
      r /= nodes;
      u(i) = z(idx[i]);
      lw += std::log(wz(idx[i]));
    }
    Eigen::VectorXd v(dim);
    v.head(D) = l * u.head(D);
    v.tail(D * T) = u.tail(D * T);
    for (int d = 0; d < D; ++d)
      for (int t = 0; t < T; ++t) {
        const double eta = xb(d * T + t) + th.phi1 * v(d) + th.phi2 * v(D + d * T + t);
        lw += data.y(d, t) * eta - data.nu(d, t) * std::exp(eta);
      }
    logw[n] = lw;
    pts[n] = std::move(v);
  }
  const double m = *std::max_element(logw.begin(), logw.end());
  double b = 0.0;
  Posterior out;
  out.p = Eigen::MatrixXd::Zero(D, T);
  out.v1 = Eigen::VectorXd::Zero(D);
  out.v2 = Eigen::MatrixXd::Zero(D, T);
  for (long long n = 0; n < total; ++n) {
    const double w = std::exp(logw[n] - m);
    const auto& v = pts[n];
    b += w;
    for (int d = 0; d < D; ++d) {
      out.v1(d) += w * v(d);
      for (int t = 0; t < T; ++t) {
        out.v2(d, t) += w * v(D + d * T + t);
        out.p(d, t) += w * std::exp(xb(d * T + t) + th.phi1 * v(d) + th.phi2 * v(D + d * T + t));
      }
    }
  }
  out.p /= b;
  out.v1 /= b;
  out.v2 /= b;
  return out;
}

struct McMoment {
  double mean = 0.0;
  double se = 0.0;
};

struct McMoments {
  Eigen::MatrixXd count, count_se;        // E[y_dt]
  Eigen::MatrixXd count_sq, count_sq_se;  // E[y_dt^2]
  Eigen::VectorXd dom_sq, dom_sq_se;      // E[y_d.^2]
  Eigen::MatrixXd cross, cross_se;        // E[y_d1. y_d2.], d1 != d2
};

// Brute-force simulation of the count moments: draws effects and Poisson
// counts and averages the raw products.
inline McMoments simulate_moments(const ParamVector& th, const PanelData& data, const Eigen::MatrixXd& gamma,
                                  long long draws, unsigned long long seed) {
  const int D = data.D, T = data.T;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const Eigen::MatrixXd l = gamma.llt().matrixL();
  const Eigen::VectorXd xb = data.x * th.beta;
  Eigen::MatrixXd s1c = Eigen::MatrixXd::Zero(D, T), s2c = s1c, s1q = s1c, s2q = s1c;
  Eigen::VectorXd s1d = Eigen::VectorXd::Zero(D), s2d = s1d;
  Eigen::MatrixXd s1x = Eigen::MatrixXd::Zero(D, D), s2x = s1x;
  Eigen::VectorXd u(D);
  Eigen::MatrixXd y(D, T);
  for (long long n = 0; n < draws; ++n) {
    for (int d = 0; d < D; ++d) u(d) = normal(rng);
    const Eigen::VectorXd v1 = l * u;
    for (int d = 0; d < D; ++d)
      for (int t = 0; t < T; ++t) {
        const double mu = data.nu(d, t) * std::exp(xb(d * T + t) + th.phi1 * v1(d) + th.phi2 * normal(rng));
        y(d, t) = static_cast<double>(std::poisson_distribution<long long>(mu)(rng));
      }
    const Eigen::VectorXd yd = y.rowwise().sum();
    s1c += y;
    s2c += y.cwiseAbs2();
    const Eigen::MatrixXd ysq = y.cwiseAbs2();
    s1q += ysq;
    s2q += ysq.cwiseAbs2();
    s1d += yd.cwiseAbs2();
    s2d += yd.cwiseAbs2().cwiseAbs2();
    const Eigen::MatrixXd outer = yd * yd.transpose();
    s1x += outer;
    s2x += outer.cwiseAbs2();
  }
  const double n = static_cast<double>(draws);
  auto se = [n](const auto& s1, const auto& s2) {
    return ((s2.array() / n - (s1.array() / n).square()).max(0.0) / n).sqrt().matrix().eval();
  };
  McMoments out;
  out.count = s1c / n;
  out.count_se = se(s1c, s2c);
  out.count_sq = s1q / n;
  out.count_sq_se = se(s1q, s2q);
  out.dom_sq = s1d / n;
  out.dom_sq_se = se(s1d, s2d);
  out.cross = s1x / n;
  out.cross_se = se(s1x, s2x);
  return out;
}

}  // namespace spt::oracle
