#pragma once

// Oracle comparisons shared by the unit tests and the acceptance gate.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sptsae/model.hpp"
#include "sptsae/predict.hpp"

namespace spt::check {

// Five-point central differences of the full residual vector.
inline Eigen::MatrixXd fd_jacobian(const ParamVector& th, const PanelData& data, const ProximityMatrix& w) {
  const Eigen::VectorXd base = th.flat();
  const int n = static_cast<int>(base.size());
  Eigen::MatrixXd out(n, n);
  auto f = [&](const Eigen::VectorXd& t) {
    const auto pv = ParamVector::from_flat(t);
    return evaluate_moments(pv, data, SarCovariance(w, pv.rho), false).f;
  };
  for (int j = 0; j < n; ++j) {
    const double h = 1e-3 * std::max(1.0, std::abs(base(j)));
    auto at = [&](double k) {
      Eigen::VectorXd t = base;
      t(j) += k * h;
      return f(t);
    };
    out.col(j) = (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h);
  }
  return out;
}

struct JacobianReport {
  double max_rel = 0.0;  // worst entrywise relative error
  int instances = 0;
};

// Entrywise |H - FD| / max(|H|, |FD|); entries below 1e-9 of their row's
// scale count as zero on both sides.
inline double jacobian_rel_error(const Eigen::MatrixXd& h, const Eigen::MatrixXd& fd) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double scale = std::max(h.row(i).cwiseAbs().maxCoeff(), fd.row(i).cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      const double den = std::max({std::abs(h(i, j)), std::abs(fd(i, j)), 1e-9 * scale});
      if (den > 0.0) worst = std::max(worst, std::abs(h(i, j) - fd(i, j)) / den);
    }
  }
  return worst;
}

// Random theta on the D = 9, T = 2 seven-diagonal instance.
inline JacobianReport jacobian_study(int draws, unsigned long long seed) {
  const auto w = build_seven_diagonal(9);
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  JacobianReport rep;
  PanelData data = fixture::design(9, 2);
  for (int i = 0; i < draws; ++i) {
    const auto th = fixture::theta(-4.0 + 2.0 * u(g), 1.5 * u(g), 0.1 + 0.9 * u(g), 0.1 + 0.9 * u(g),
                                   -0.8 + 1.6 * u(g));
    data = fixture::simulate(th, data, w.w(), g);
    const auto sys = evaluate_moments(th, data, SarCovariance(w, th.rho), true);
    rep.max_rel = std::max(rep.max_rel, jacobian_rel_error(sys.h, fd_jacobian(th, data, w)));
    ++rep.instances;
  }
  return rep;
}

struct MomentReport {
  double max_z = 0.0;  // largest |closed form - MC mean| / MC standard error
  int compared = 0;
};

inline MomentReport moment_study(long long draws, unsigned long long seed) {
  Eigen::MatrixXd w0(3, 3);
  w0 << 0, 1, 1, 1, 0, 0, 1, 0, 0;
  const auto w = ProximityMatrix::from_raw(w0);
  const auto th = fixture::theta(-1.0, 0.6, 0.4, 0.3, 0.5);
  PanelData data = fixture::design(3, 2, 1.0);
  data.nu << 3, 5, 4, 2, 6, 1;
  const SarCovariance cov(w, th.rho);
  const auto mc = oracle::simulate_moments(th, data, oracle::sar_gamma(w.w(), th.rho), draws, seed);
  MomentReport rep;
  auto add = [&](double exact, double mean, double se) {
    rep.max_z = std::max(rep.max_z, std::abs(exact - mean) / se);
    ++rep.compared;
  };
  for (int d = 0; d < 3; ++d) {
    const double gdd = cov.gamma()(d, d);
    for (int t = 0; t < 2; ++t) {
      const auto xr = data.x.row(data.cell(d, t));
      add(expected_count(th, data.nu(d, t), xr, gdd), mc.count(d, t), mc.count_se(d, t));
      add(expected_count_sq(th, data.nu(d, t), xr, gdd), mc.count_sq(d, t), mc.count_sq_se(d, t));
    }
    add(expected_domain_sum_sq(th, data, d, gdd), mc.dom_sq(d), mc.dom_sq_se(d));
    for (int e = d + 1; e < 3; ++e) add(expected_cross_product(th, data, d, e, cov), mc.cross(d, e), mc.cross_se(d, e));
  }
  return rep;
}

struct QuadratureReport {
  double p_rel = 0.0;
  double v1_rel = 0.0;
  double v2_rel = 0.0;
  int instances = 0;
};

inline double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return ((a - b).array() / b.array()).abs().maxCoeff();
}

// Exact EBP against the 30-node product rule on random D = 2, T = 1 instances.
inline QuadratureReport quadrature_study(int instances, int s1, int s2, unsigned long long seed) {
  Eigen::MatrixXd w0(2, 2);
  w0 << 0, 1, 1, 0;
  const auto w = ProximityMatrix::from_raw(w0);
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QuadratureReport rep;
  for (int i = 0; i < instances; ++i) {
    ParamVector th;
    th.beta = Eigen::VectorXd::Constant(1, -2.0 + u(g));
    th.phi1 = 0.2 + 0.4 * u(g);
    th.phi2 = 0.2 + 0.4 * u(g);
    th.rho = -0.6 + 1.2 * u(g);
    PanelData data = PanelData::make(Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Constant(2, 1, 10.0),
                                     Eigen::MatrixXd::Ones(2, 1));
    data = fixture::simulate(th, data, w.w(), g);
    const auto ref = oracle::quadrature_posterior(th, data, oracle::sar_gamma(w.w(), th.rho), 30);
    const auto e = ebp_exact_p(th, data, SarCovariance(w, th.rho), McConfig{s1, s2, seed + i, 1});
    rep.p_rel = std::max(rep.p_rel, max_rel(e.p_hat, ref.p));
    rep.v1_rel = std::max(rep.v1_rel, max_rel(*e.v1_hat, ref.v1));
    rep.v2_rel = std::max(rep.v2_rel, max_rel(*e.v2_hat, ref.v2));
    ++rep.instances;
  }
  return rep;
}

}  // namespace spt::check
