#include "sptsae/predict.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sptsae/errors.hpp"
#include "sptsae/parallel.hpp"

namespace spt {

std::string predictor_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::ebp_exact: return "ebp-exact";
    case PredictorKind::ebp_approx: return "ebp-approx";
    case PredictorKind::plug_in: return "plugin";
    case PredictorKind::synthetic: return "synthetic";
    case PredictorKind::bp_plug_in: return "bp-plugin";
  }
  return "unknown";
}

PredictorKind parse_predictor(const std::string& name) {
  for (auto k : {PredictorKind::ebp_exact, PredictorKind::ebp_approx, PredictorKind::plug_in,
                 PredictorKind::synthetic, PredictorKind::bp_plug_in})
    if (predictor_name(k) == name) return k;
  throw DataError(fmt::format("unknown predictor '{}' (expected ebp-approx, ebp-exact, plugin, synthetic)", name));
}

namespace {

void check_config(const McConfig& cfg) {
  if (cfg.s1 < 1 || cfg.s2 < 1) throw DataError("Monte Carlo sizes s1 and s2 must be >= 1");
}

Eigen::VectorXd linear_part(const ParamVector& theta, const PanelData& data) {
  if (theta.p() != data.p)
    throw DataError(fmt::format("parameter vector has {} coefficients, data has p = {}", theta.p(), data.p));
  return data.x * theta.beta;
}

// s x n standard normals, row after row, with the reflected copy appended.
Eigen::MatrixXd antithetic_normals(int s, int n, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(2 * s, n);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = normal(rng);
  out.bottomRows(s) = -out.topRows(s);
  return out;
}

PredictionSet finish(PredictorKind kind, const PanelData& data, Eigen::MatrixXd p_hat) {
  PredictionSet out;
  out.kind = kind;
  if (!p_hat.allFinite() || !(p_hat.minCoeff() > 0.0))
    throw NumericalError("predicted proportions are not finite and positive");
  out.mu_hat = data.nu.cwiseProduct(p_hat);
  out.p_hat = std::move(p_hat);
  return out;
}

void check_effects(const Eigen::VectorXd& v1, const Eigen::MatrixXd& v2) {
  if (!v1.allFinite() || !v2.allFinite())
    throw NumericalError("Monte Carlo weights degenerated; try the approximate EBP or larger draw counts");
}

}  // namespace

AntitheticDraws antithetic_draws(const SarCovariance& cov, int D, int T, const McConfig& cfg) {
  check_config(cfg);
  if (cov.size() != D) throw DataError("covariance dimension does not match domain count");
  AntitheticDraws out;
  Rng r1 = make_stream(cfg.seed, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd u(D, cfg.s1);
  for (int s = 0; s < cfg.s1; ++s)
    for (int d = 0; d < D; ++d) u(d, s) = normal(r1);
  const Eigen::MatrixXd v = cov.rho() == 0.0 ? u : cov.apply_inverse(u);
  out.v1.resize(2 * cfg.s1, D);
  out.v1.topRows(cfg.s1) = v.transpose();
  out.v1.bottomRows(cfg.s1) = -out.v1.topRows(cfg.s1);
  Rng r2 = make_stream(cfg.seed, 1);
  out.v2 = antithetic_normals(cfg.s2, D * T, r2);
  return out;
}

namespace {

struct EbpOutput {
  Eigen::MatrixXd p_hat;
  Eigen::VectorXd v1;
  Eigen::MatrixXd v2;
};

EbpOutput ebp_exact_impl(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                         const McConfig& cfg) {
  const int D = data.D, T = data.T, n = D * T;
  const Eigen::VectorXd xb = linear_part(theta, data);
  for (int c = 0; c < n; ++c) checked_exp(xb(c));
  const auto draws = antithetic_draws(cov, D, T, cfg);
  const int S1 = cfg.s1, S2 = cfg.s2;
  const double phi1 = theta.phi1, phi2 = theta.phi2;

  Eigen::VectorXd yflat(n), nuflat(n);
  for (int d = 0; d < D; ++d)
    for (int t = 0; t < T; ++t) {
      yflat(data.cell(d, t)) = data.y(d, t);
      nuflat(data.cell(d, t)) = data.nu(d, t);
    }
  const Eigen::MatrixXd e2 = (phi2 * draws.v2.array()).exp().matrix();
  const Eigen::VectorXd y2 = draws.v2 * (phi2 * yflat);
  const Eigen::MatrixXd v2_top = draws.v2.topRows(S2);

  // Per-s1 summaries: row log-scale, weight sum, weighted E2 and v2 sums.
  Eigen::VectorXd row_max(2 * S1), row_sum(2 * S1);
  Eigen::MatrixXd row_e2(2 * S1, n), row_v2(2 * S1, n);
  parallel_for(static_cast<std::size_t>(2 * S1), cfg.threads, [&](std::size_t s) {
    Eigen::VectorXd k(n);
    double offset = 0.0;
    for (int d = 0; d < D; ++d) {
      const double a = phi1 * draws.v1(s, d);
      for (int t = 0; t < T; ++t) {
        const int c = d * T + t;
        k(c) = nuflat(c) * checked_exp(xb(c) + a);
        offset += yflat(c) * a;
      }
    }
    Eigen::ArrayXd l = (y2 - e2 * k).array() + offset;
    const double m = l.maxCoeff();
    if (!std::isfinite(m)) throw NumericalError("exact EBP log-weights are not finite");
    const Eigen::VectorXd w = (l - m).exp().matrix();
    row_max(s) = m;
    row_sum(s) = w.sum();
    if (phi2 == 0.0) row_e2.row(s).setConstant(row_sum(s));
    else row_e2.row(s) = (e2.transpose() * w).transpose();
    row_v2.row(s) = (v2_top.transpose() * (w.head(S2) - w.tail(S2))).transpose();
  });

  const double big = row_max.maxCoeff();
  double b = 0.0;
  Eigen::VectorXd p_num = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v1_num = Eigen::VectorXd::Zero(D);
  Eigen::VectorXd v2_num = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < S1; ++s) {
    const int r = S1 + s;
    const double ca = std::exp(row_max(s) - big) * row_sum(s);
    const double cb = std::exp(row_max(r) - big) * row_sum(r);
    const double sa = std::exp(row_max(s) - big);
    const double sb = std::exp(row_max(r) - big);
    b += ca + cb;
    for (int d = 0; d < D; ++d) {
      v1_num(d) += ca * draws.v1(s, d) + cb * draws.v1(r, d);
      const double ga = std::exp(phi1 * draws.v1(s, d));
      const double gb = std::exp(phi1 * draws.v1(r, d));
      for (int t = 0; t < T; ++t) {
        const int c = d * T + t;
        p_num(c) += sa * ga * row_e2(s, c) + sb * gb * row_e2(r, c);
      }
    }
    v2_num += sa * row_v2.row(s).transpose() + sb * row_v2.row(r).transpose();
  }
  if (!(b > 0.0) || !std::isfinite(b))
    throw NumericalError("exact EBP normalizing sum underflowed; use the approximate EBP");

  EbpOutput out;
  out.p_hat.resize(D, T);
  out.v1 = v1_num / b;
  out.v2.resize(D, T);
  for (int d = 0; d < D; ++d)
    for (int t = 0; t < T; ++t) {
      const int c = d * T + t;
      out.p_hat(d, t) = std::exp(xb(c)) * (p_num(c) / b);
      out.v2(d, t) = v2_num(c) / b;
    }
  check_effects(out.v1, out.v2);
  return out;
}

EbpOutput ebp_approx_impl(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                          const McConfig& cfg) {
  check_config(cfg);
  const int D = data.D, T = data.T;
  const Eigen::VectorXd xb = linear_part(theta, data);
  for (int c = 0; c < D * T; ++c) checked_exp(xb(c));
  if (cov.size() != D) throw DataError("covariance dimension does not match domain count");
  const int S1 = cfg.s1, S2 = cfg.s2;
  const double phi1 = theta.phi1, phi2 = theta.phi2;

  // Global v1 draws; only column d is used for domain d.
  Rng r1 = make_stream(cfg.seed, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd u(D, S1);
  for (int s = 0; s < S1; ++s)
    for (int d = 0; d < D; ++d) u(d, s) = normal(r1);
  Eigen::MatrixXd v1(2 * S1, D);
  v1.topRows(S1) = (cov.rho() == 0.0 ? u : cov.apply_inverse(u)).transpose();
  v1.bottomRows(S1) = -v1.topRows(S1);

  EbpOutput out;
  out.p_hat.resize(D, T);
  out.v1.resize(D);
  out.v2.resize(D, T);

  parallel_for(static_cast<std::size_t>(D), cfg.threads, [&](std::size_t du) {
    const int d = static_cast<int>(du);
    Rng r2 = make_stream(cfg.seed, 2 + static_cast<std::uint64_t>(d));
    const Eigen::MatrixXd v2 = antithetic_normals(S2, T, r2);
    const Eigen::ArrayXXd e2 = (phi2 * v2.array()).exp();
    Eigen::ArrayXXd yv2(2 * S2, T);
    for (int t = 0; t < T; ++t) yv2.col(t) = data.y(d, t) * phi2 * v2.col(t).array();
    const double y_dot = data.y_dot(d);

    Eigen::VectorXd log_omega(2 * S1);
    Eigen::MatrixXd r_e2(2 * S1, T), r_v2(2 * S1, T);
    Eigen::ArrayXd g(2 * S2), w(2 * S2);
    for (int s = 0; s < 2 * S1; ++s) {
      const double a = phi1 * v1(s, d);
      double lw = y_dot * a;
      for (int t = 0; t < T; ++t) {
        const double k = data.nu(d, t) * checked_exp(xb(data.cell(d, t)) + a);
        g = yv2.col(t) - k * e2.col(t);
        const double m = g.maxCoeff();
        w = (g - m).exp();
        const double i0 = w.sum();
        lw += m + std::log(i0);
        r_e2(s, t) = phi2 == 0.0 ? 1.0 : (w * e2.col(t)).sum() / i0;
        r_v2(s, t) = ((w.head(S2) - w.tail(S2)) * v2.col(t).head(S2).array()).sum() / i0;
      }
      log_omega(s) = lw;
    }
    const double big = log_omega.maxCoeff();
    if (!std::isfinite(big)) throw NumericalError(fmt::format("approximate EBP weights not finite in domain {}", d + 1));
    double b = 0.0, v1n = 0.0;
    Eigen::VectorXd pn = Eigen::VectorXd::Zero(T), v2n = Eigen::VectorXd::Zero(T);
    for (int s = 0; s < S1; ++s) {
      const int r = S1 + s;
      const double oa = std::exp(log_omega(s) - big);
      const double ob = std::exp(log_omega(r) - big);
      b += oa + ob;
      v1n += oa * v1(s, d) + ob * v1(r, d);
      const double ga = std::exp(phi1 * v1(s, d));
      const double gb = std::exp(phi1 * v1(r, d));
      for (int t = 0; t < T; ++t) {
        pn(t) += oa * (ga * r_e2(s, t)) + ob * (gb * r_e2(r, t));
        v2n(t) += oa * r_v2(s, t) + ob * r_v2(r, t);
      }
    }
    out.v1(d) = v1n / b;
    for (int t = 0; t < T; ++t) {
      out.p_hat(d, t) = std::exp(xb(data.cell(d, t))) * (pn(t) / b);
      out.v2(d, t) = v2n(t) / b;
    }
  });
  check_effects(out.v1, out.v2);
  return out;
}

}  // namespace

PredictionSet ebp_exact_p(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                          const McConfig& cfg) {
  auto r = ebp_exact_impl(theta, data, cov, cfg);
  auto out = finish(PredictorKind::ebp_exact, data, std::move(r.p_hat));
  out.v1_hat = std::move(r.v1);
  out.v2_hat = std::move(r.v2);
  return out;
}

PredictionSet ebp_approx_p(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                           const McConfig& cfg) {
  auto r = ebp_approx_impl(theta, data, cov, cfg);
  auto out = finish(PredictorKind::ebp_approx, data, std::move(r.p_hat));
  out.v1_hat = std::move(r.v1);
  out.v2_hat = std::move(r.v2);
  return out;
}

RandomEffects ebp_random_effects(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                 const McConfig& cfg, EbpMode mode) {
  auto r = mode == EbpMode::exact ? ebp_exact_impl(theta, data, cov, cfg) : ebp_approx_impl(theta, data, cov, cfg);
  return {std::move(r.v1), std::move(r.v2)};
}

PredictionSet plug_in_p(const ParamVector& theta, const PanelData& data, const Eigen::VectorXd& v1_hat,
                        const Eigen::MatrixXd& v2_hat) {
  if (v1_hat.size() != data.D || v2_hat.rows() != data.D || v2_hat.cols() != data.T)
    throw DataError("predicted effects do not match the panel");
  const Eigen::VectorXd xb = linear_part(theta, data);
  Eigen::MatrixXd p(data.D, data.T);
  for (int d = 0; d < data.D; ++d)
    for (int t = 0; t < data.T; ++t)
      p(d, t) = checked_exp(xb(data.cell(d, t)) + theta.phi1 * v1_hat(d) + theta.phi2 * v2_hat(d, t));
  auto out = finish(PredictorKind::plug_in, data, std::move(p));
  out.v1_hat = v1_hat;
  out.v2_hat = v2_hat;
  return out;
}

PredictionSet synthetic_p(const ParamVector& theta, const PanelData& data) {
  const Eigen::VectorXd xb = linear_part(theta, data);
  Eigen::MatrixXd p(data.D, data.T);
  for (int d = 0; d < data.D; ++d)
    for (int t = 0; t < data.T; ++t) p(d, t) = checked_exp(xb(data.cell(d, t)));
  return finish(PredictorKind::synthetic, data, std::move(p));
}

PredictionSet bp_plug_in_p(const ParamVector& theta_true, const PanelData& data, const SarCovariance& cov,
                           const McConfig& cfg, EbpMode mode) {
  const auto eff = ebp_random_effects(theta_true, data, cov, cfg, mode);
  auto out = plug_in_p(theta_true, data, eff.v1, eff.v2);
  out.kind = PredictorKind::bp_plug_in;
  return out;
}

PredictionSet predict(PredictorKind kind, const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                      const McConfig& cfg) {
  switch (kind) {
    case PredictorKind::ebp_exact: return ebp_exact_p(theta, data, cov, cfg);
    case PredictorKind::ebp_approx: return ebp_approx_p(theta, data, cov, cfg);
    case PredictorKind::plug_in: {
      const auto eff = ebp_random_effects(theta, data, cov, cfg, EbpMode::approx);
      return plug_in_p(theta, data, eff.v1, eff.v2);
    }
    case PredictorKind::synthetic: return synthetic_p(theta, data);
    case PredictorKind::bp_plug_in: return bp_plug_in_p(theta, data, cov, cfg);
  }
  throw DataError("unknown predictor kind");
}

}  // namespace spt
