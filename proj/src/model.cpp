#include "sptsae/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "sptsae/errors.hpp"

namespace spt {

PanelData PanelData::make(Eigen::MatrixXd y, Eigen::MatrixXd nu, Eigen::MatrixXd x) {
  PanelData data;
  data.D = static_cast<int>(y.rows());
  data.T = static_cast<int>(y.cols());
  data.p = static_cast<int>(x.cols());
  if (nu.rows() != y.rows() || nu.cols() != y.cols()) throw DataError("size matrix does not match count matrix");
  if (x.rows() != y.size()) throw DataError("covariate rows do not match D * T");
  data.y = std::move(y);
  data.nu = std::move(nu);
  data.x = std::move(x);
  for (int d = 1; d <= data.D; ++d) data.domain_labels.push_back(std::to_string(d));
  for (int t = 1; t <= data.T; ++t) data.time_labels.push_back(std::to_string(t));
  for (int k = 1; k <= data.p; ++k) data.covariate_names.push_back(fmt::format("x{}", k));
  auto problems = panel_violations(data);
  if (!problems.empty()) throw DataError(problems.front());
  return data;
}

std::vector<std::string> panel_violations(const PanelData& data) {
  std::vector<std::string> out;
  if (data.D < 1 || data.T < 1) out.push_back("panel has no cells");
  if (data.p < 1) out.push_back("panel has no covariates");
  for (int d = 0; d < data.D; ++d) {
    for (int t = 0; t < data.T; ++t) {
      const double y = data.y(d, t);
      const double nu = data.nu(d, t);
      const std::string where = fmt::format("domain '{}', time '{}'", data.domain_labels[d], data.time_labels[t]);
      if (!(y >= 0.0) || y != std::floor(y)) out.push_back(fmt::format("{}: count must be a nonnegative integer", where));
      if (!(nu >= 1.0) || nu != std::floor(nu)) out.push_back(fmt::format("{}: size must be an integer >= 1", where));
    }
  }
  if (data.x.rows() > 0 && data.p > 0) {
    if (!data.x.allFinite()) out.push_back("covariates contain non-finite values");
    else {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(data.x);
      if (qr.rank() < data.p) out.push_back(fmt::format("design matrix is rank deficient (rank {} < p = {})", qr.rank(), data.p));
    }
  }
  return out;
}

Eigen::VectorXd ParamVector::flat() const {
  Eigen::VectorXd out(beta.size() + 3);
  out.head(beta.size()) = beta;
  out(beta.size()) = phi1;
  out(beta.size() + 1) = phi2;
  out(beta.size() + 2) = rho;
  return out;
}

ParamVector ParamVector::from_flat(const Eigen::VectorXd& theta) {
  const Eigen::Index p = theta.size() - 3;
  if (p < 1) throw DataError("parameter vector too short");
  ParamVector out;
  out.beta = theta.head(p);
  out.phi1 = theta(p);
  out.phi2 = theta(p + 1);
  out.rho = theta(p + 2);
  return out;
}

namespace {

const std::map<Variant, std::string>& variant_names() {
  static const std::map<Variant, std::string> names = {
      {Variant::ST1, "st1"}, {Variant::ST1_1, "st1_1"}, {Variant::T1, "t1"}, {Variant::T1_2, "t1_2"},
      {Variant::S1, "s1"},   {Variant::M1, "m1"},       {Variant::M0, "m0"}};
  return names;
}

std::vector<int> range(int n) {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace

std::string variant_name(Variant v) { return variant_names().at(v); }

Variant parse_variant(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [v, n] : variant_names())
    if (n == lower) return v;
  throw DataError(fmt::format("unknown model '{}' (expected st1, st1_1, t1, t1_2, s1, m1, m0)", name));
}

ModelSpec ModelSpec::make(Variant v, int p) {
  if (p < 1) throw DataError("model needs at least one covariate");
  ModelSpec s;
  s.variant = v;
  s.p = p;
  s.params = range(p);
  s.equations = range(p);
  const int phi1 = p, phi2 = p + 1, rho = p + 2;
  const int dom = p, cell = p + 1, cross = p + 2;
  auto add = [&](std::initializer_list<int> ps, std::initializer_list<int> es) {
    s.params.insert(s.params.end(), ps);
    s.equations.insert(s.equations.end(), es);
  };
  switch (v) {
    case Variant::ST1: add({phi1, phi2, rho}, {dom, cell, cross}); break;
    case Variant::ST1_1: add({phi1, rho}, {dom, cross}); break;
    case Variant::T1: add({phi1, phi2}, {dom, cell}); break;
    case Variant::T1_2: add({phi2}, {cell}); break;
    case Variant::S1: add({phi1, rho}, {dom, cross}); break;
    case Variant::M1: add({phi1}, {dom}); break;
    case Variant::M0: break;
  }
  return s;
}

bool ModelSpec::has_param(int idx) const { return std::find(params.begin(), params.end(), idx) != params.end(); }

bool ModelSpec::has_equation(int idx) const {
  return std::find(equations.begin(), equations.end(), idx) != equations.end();
}

ModelSpec ModelSpec::with_fixed_rho() const { return without(rho_index(), p + 2); }

ModelSpec ModelSpec::without(int idx, int eq) const {
  ModelSpec s = *this;
  std::erase(s.params, idx);
  std::erase(s.equations, eq);
  return s;
}

ParamVector constrain_to(const ParamVector& theta, const ModelSpec& spec) {
  ParamVector out = theta;
  const bool spatial_variant =
      spec.variant == Variant::ST1 || spec.variant == Variant::ST1_1 || spec.variant == Variant::S1;
  if (!spec.has_param(spec.phi1_index())) out.phi1 = 0.0;
  if (!spec.has_param(spec.phi2_index())) out.phi2 = 0.0;
  if (!spatial_variant) out.rho = 0.0;
  return out;
}

double checked_exp(double exponent) {
  if (!(exponent <= kExponentCap)) {
    throw OverflowError(fmt::format("exponent {:.6g} exceeds {}; the fit has likely diverged", exponent, kExponentCap));
  }
  return std::exp(exponent);
}

double linear_predictor_p(const ParamVector& theta, const Eigen::Ref<const Eigen::RowVectorXd>& x_dt, double v1d,
                          double v2dt) {
  return checked_exp(x_dt.dot(theta.beta) + theta.phi1 * v1d + theta.phi2 * v2dt);
}

double expected_count(const ParamVector& theta, double nu_dt, const Eigen::Ref<const Eigen::RowVectorXd>& x_dt,
                      double gamma_dd) {
  const double s = theta.phi1 * theta.phi1 * gamma_dd;
  const double g = theta.phi2 * theta.phi2;
  return nu_dt * checked_exp(x_dt.dot(theta.beta) + 0.5 * (s + g));
}

double expected_count_sq(const ParamVector& theta, double nu_dt, const Eigen::Ref<const Eigen::RowVectorXd>& x_dt,
                         double gamma_dd) {
  const double s = theta.phi1 * theta.phi1 * gamma_dd;
  const double g = theta.phi2 * theta.phi2;
  const double xb = x_dt.dot(theta.beta);
  return nu_dt * checked_exp(xb + 0.5 * (s + g)) + nu_dt * nu_dt * checked_exp(2.0 * (xb + s + g));
}

double expected_domain_sum_sq(const ParamVector& theta, const PanelData& data, int d, double gamma_dd) {
  const double s = theta.phi1 * theta.phi1 * gamma_dd;
  const double g = theta.phi2 * theta.phi2;
  double sum_p = 0.0, sum_q = 0.0, sum_r = 0.0, sum_s = 0.0;
  for (int t = 0; t < data.T; ++t) {
    const double nu = data.nu(d, t);
    const double xb = data.x.row(data.cell(d, t)).dot(theta.beta);
    sum_p += nu * checked_exp(xb + 0.5 * (s + g));
    sum_q += nu * nu * checked_exp(2.0 * (xb + s + g));
    sum_r += nu * nu * checked_exp(2.0 * (xb + s) + g);
    sum_s += nu * checked_exp(xb + s + 0.5 * g);
  }
  return sum_p + sum_q - sum_r + sum_s * sum_s;
}

double expected_cross_product(const ParamVector& theta, const PanelData& data, int d1, int d2,
                              const SarCovariance& cov) {
  if (d1 == d2) throw DataError("cross product needs two distinct domains");
  const auto& gm = cov.gamma();
  const double f1 = theta.phi1 * theta.phi1;
  const double expo = 0.5 * f1 * (gm(d1, d1) + 2.0 * gm(d1, d2) + gm(d2, d2)) + theta.phi2 * theta.phi2;
  double total = 0.0;
  for (int t1 = 0; t1 < data.T; ++t1) {
    for (int t2 = 0; t2 < data.T; ++t2) {
      const double xb = data.x.row(data.cell(d1, t1)).dot(theta.beta) + data.x.row(data.cell(d2, t2)).dot(theta.beta);
      total += data.nu(d1, t1) * data.nu(d2, t2) * checked_exp(xb + expo);
    }
  }
  return total;
}

MomentSystem evaluate_moments(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                              bool with_jacobian) {
  const int D = data.D, T = data.T, p = data.p;
  if (theta.p() != p) throw DataError(fmt::format("parameter vector has {} coefficients, data has p = {}", theta.p(), p));
  if (cov.size() != D) throw DataError("covariance dimension does not match domain count");
  const int n = p + 3;
  const int i_phi1 = p, i_phi2 = p + 1, i_rho = p + 2;
  const auto& gm = cov.gamma();
  const auto& gd = cov.gamma_dot();
  const double phi1 = theta.phi1, phi2 = theta.phi2;
  const double f1 = phi1 * phi1, g = phi2 * phi2;

  MomentSystem out;
  out.f = Eigen::VectorXd::Zero(n);
  out.observed = Eigen::VectorXd::Zero(n);
  if (with_jacobian) out.h = Eigen::MatrixXd::Zero(n, n);

  // Gradient of exp(a_xb * xb + a_s * s_d + a_g * phi2^2) divided by its value.
  Eigen::VectorXd grad(n);
  auto log_grad = [&](const Eigen::Ref<const Eigen::RowVectorXd>& xr, double a_xb, double a_s, double a_g, int d) {
    grad.head(p) = a_xb * xr.transpose();
    grad(i_phi1) = a_s * 2.0 * phi1 * gm(d, d);
    grad(i_phi2) = a_g * 2.0 * phi2;
    grad(i_rho) = a_s * f1 * gd(d, d);
  };

  const double inv_dt = 1.0 / (static_cast<double>(D) * T);
  const double inv_d = 1.0 / D;

  // Per-domain pieces of the cross-product equation.
  Eigen::VectorXd a_dom = Eigen::VectorXd::Zero(D);
  Eigen::MatrixXd a_beta = Eigen::MatrixXd::Zero(D, p);

  Eigen::VectorXd row_sum_s(n);
  for (int d = 0; d < D; ++d) {
    const double s = f1 * gm(d, d);
    double sum_s = 0.0;
    row_sum_s.setZero();
    double domain_sq = 0.0;
    Eigen::VectorXd domain_grad = Eigen::VectorXd::Zero(with_jacobian ? n : 0);
    for (int t = 0; t < T; ++t) {
      const int c = data.cell(d, t);
      const auto xr = data.x.row(c);
      const double nu = data.nu(d, t);
      const double y = data.y(d, t);
      const double xb = xr.dot(theta.beta);
      const double pv = nu * checked_exp(xb + 0.5 * (s + g));
      const double qv = nu * nu * checked_exp(2.0 * (xb + s + g));
      const double rv = nu * nu * checked_exp(2.0 * (xb + s) + g);
      const double sv = nu * checked_exp(xb + s + 0.5 * g);
      const double av = nu * checked_exp(xb + 0.5 * s);

      out.f.head(p) += inv_dt * pv * xr.transpose();
      out.observed.head(p) += inv_dt * y * xr.transpose();
      out.f(p + 1) += inv_dt * (pv + qv);
      out.observed(p + 1) += inv_dt * y * y;
      domain_sq += pv + qv - rv;
      sum_s += sv;
      a_dom(d) += av;
      a_beta.row(d) += av * xr;

      if (with_jacobian) {
        log_grad(xr, 1.0, 0.5, 0.5, d);
        const Eigen::VectorXd gp = pv * grad;
        for (int k = 0; k < p; ++k) out.h.row(k) += inv_dt * xr(k) * gp.transpose();
        out.h.row(p + 1) += inv_dt * gp.transpose();
        domain_grad += gp;
        log_grad(xr, 2.0, 2.0, 2.0, d);
        out.h.row(p + 1) += inv_dt * qv * grad.transpose();
        domain_grad += qv * grad;
        log_grad(xr, 2.0, 2.0, 1.0, d);
        domain_grad -= rv * grad;
        log_grad(xr, 1.0, 1.0, 0.5, d);
        row_sum_s += sv * grad;
      }
    }
    domain_sq += sum_s * sum_s;
    out.f(p) += inv_d * domain_sq;
    const double yd = data.y_dot(d);
    out.observed(p) += inv_d * yd * yd;
    if (with_jacobian) {
      domain_grad += 2.0 * sum_s * row_sum_s;
      out.h.row(p) += inv_d * domain_grad.transpose();
    }
  }

  if (D >= 2) {
    const double inv_pairs = 1.0 / (static_cast<double>(D) * (D - 1));
    const double eg = checked_exp(g);
    double total = 0.0;
    Eigen::VectorXd cg = Eigen::VectorXd::Zero(n);
    for (int d1 = 0; d1 < D; ++d1) {
      for (int d2 = 0; d2 < D; ++d2) {
        if (d1 == d2) continue;
        const double m = checked_exp(f1 * gm(d1, d2));
        const double c12 = eg * a_dom(d1) * a_dom(d2) * m;
        total += c12;
        if (with_jacobian) {
          cg.head(p) += eg * m * (a_beta.row(d1) * a_dom(d2) + a_dom(d1) * a_beta.row(d2)).transpose();
          cg(i_phi1) += c12 * phi1 * (gm(d1, d1) + gm(d2, d2) + 2.0 * gm(d1, d2));
          cg(i_phi2) += c12 * 2.0 * phi2;
          cg(i_rho) += c12 * 0.5 * f1 * (gd(d1, d1) + gd(d2, d2) + 2.0 * gd(d1, d2));
        }
      }
    }
    out.f(p + 2) = inv_pairs * total;
    double ysum = 0.0, ysq = 0.0;
    for (int d = 0; d < D; ++d) {
      const double yd = data.y_dot(d);
      ysum += yd;
      ysq += yd * yd;
    }
    out.observed(p + 2) = inv_pairs * (ysum * ysum - ysq);
    if (with_jacobian) out.h.row(p + 2) = inv_pairs * cg.transpose();
  }

  out.f -= out.observed;
  if (!out.f.allFinite() || (with_jacobian && !out.h.allFinite()))
    throw OverflowError("moment system is not finite; the fit has likely diverged");
  return out;
}

Eigen::VectorXd moment_residuals(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                 const ModelSpec& spec) {
  const auto sys = evaluate_moments(theta, data, cov, false);
  Eigen::VectorXd out(spec.equations.size());
  for (std::size_t i = 0; i < spec.equations.size(); ++i) out(i) = sys.f(spec.equations[i]);
  return out;
}

Eigen::MatrixXd moment_jacobian(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                const ModelSpec& spec) {
  const auto sys = evaluate_moments(theta, data, cov, true);
  Eigen::MatrixXd out(spec.equations.size(), spec.params.size());
  for (std::size_t i = 0; i < spec.equations.size(); ++i)
    for (std::size_t j = 0; j < spec.params.size(); ++j) out(i, j) = sys.h(spec.equations[i], spec.params[j]);
  return out;
}

Eigen::MatrixXd pearson_residuals(const PanelData& data, const Eigen::MatrixXd& p_hat) {
  if (p_hat.rows() != data.D || p_hat.cols() != data.T) throw DataError("predictions do not cover the panel");
  Eigen::MatrixXd r(data.D, data.T);
  for (int d = 0; d < data.D; ++d) {
    for (int t = 0; t < data.T; ++t) {
      if (!(p_hat(d, t) > 0.0))
        throw NumericalError(fmt::format("nonpositive prediction at domain {} time {}", d + 1, t + 1));
      const double mu = data.nu(d, t) * p_hat(d, t);
      r(d, t) = (data.y(d, t) - mu) / std::sqrt(mu);
    }
  }
  return r;
}

}  // namespace spt
