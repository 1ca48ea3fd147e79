#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "sptsae/spatial.hpp"

namespace spt {

// Balanced D x T panel. Covariate row of cell (d, t) is x.row(d * T + t).
struct PanelData {
  int D = 0;
  int T = 0;
  int p = 0;
  Eigen::MatrixXd y;   // D x T counts
  Eigen::MatrixXd nu;  // D x T sizes
  Eigen::MatrixXd x;   // (D*T) x p
  std::vector<std::string> domain_labels;
  std::vector<std::string> time_labels;
  std::vector<std::string> covariate_names;

  int cell(int d, int t) const { return d * T + t; }
  double y_dot(int d) const { return y.row(d).sum(); }

  // Assembles and validates a panel; throws DataError on invalid input.
  static PanelData make(Eigen::MatrixXd y, Eigen::MatrixXd nu, Eigen::MatrixXd x);
};

// Violations of the panel invariants (counts, sizes, design rank); empty when valid.
std::vector<std::string> panel_violations(const PanelData& data);

struct ParamVector {
  Eigen::VectorXd beta;
  double phi1 = 0.0;
  double phi2 = 0.0;
  double rho = 0.0;

  int p() const { return static_cast<int>(beta.size()); }
  // Flattened order (beta_1..beta_p, phi1, phi2, rho).
  Eigen::VectorXd flat() const;
  static ParamVector from_flat(const Eigen::VectorXd& theta);
};

enum class Variant { ST1, ST1_1, T1, T1_2, S1, M1, M0 };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Flat parameter indices are 0..p-1 for beta, then p (phi1), p+1 (phi2), p+2 (rho).
// Equation indices: 0..p-1 first-moment equations, p domain-total square,
// p+1 cell square, p+2 cross-domain product.
struct ModelSpec {
  Variant variant = Variant::ST1;
  int p = 0;
  std::vector<int> params;
  std::vector<int> equations;

  static ModelSpec make(Variant v, int p);

  int phi1_index() const { return p; }
  int phi2_index() const { return p + 1; }
  int rho_index() const { return p + 2; }
  bool has_param(int idx) const;
  bool has_equation(int idx) const;
  bool uses_phi2() const { return has_param(phi2_index()); }
  bool uses_spatial() const { return has_param(rho_index()); }
  // Same model with rho held fixed: the cross-product equation is dropped.
  ModelSpec with_fixed_rho() const;
  // Drops parameter idx and equation eq (boundary submodels).
  ModelSpec without(int idx, int eq) const;
};

// Forces the parameters a spec does not estimate to their structural values
// (phi = 0, rho = 0 for non-spatial variants). rho of spatial variants is kept.
ParamVector constrain_to(const ParamVector& theta, const ModelSpec& spec);

// Exponential that throws OverflowError above the exponent cap.
inline constexpr double kExponentCap = 700.0;
double checked_exp(double exponent);

double linear_predictor_p(const ParamVector& theta, const Eigen::Ref<const Eigen::RowVectorXd>& x_dt, double v1d,
                          double v2dt);
double expected_count(const ParamVector& theta, double nu_dt, const Eigen::Ref<const Eigen::RowVectorXd>& x_dt,
                      double gamma_dd);
double expected_count_sq(const ParamVector& theta, double nu_dt, const Eigen::Ref<const Eigen::RowVectorXd>& x_dt,
                         double gamma_dd);
double expected_domain_sum_sq(const ParamVector& theta, const PanelData& data, int d, double gamma_dd);
double expected_cross_product(const ParamVector& theta, const PanelData& data, int d1, int d2,
                              const SarCovariance& cov);

struct MomentSystem {
  Eigen::VectorXd f;  // all p + 3 residuals
  Eigen::MatrixXd h;  // (p+3) x (p+3), empty unless requested
  Eigen::VectorXd observed;  // data terms, same order as f
};

// Full ST1 system at theta; cov must be built at theta.rho. The cross-product
// equation is skipped (left at 0) when D < 2. Equations needing T >= 2 are
// still evaluated; the ModelSpec masks decide which are used.
MomentSystem evaluate_moments(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                              bool with_jacobian);

Eigen::VectorXd moment_residuals(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                 const ModelSpec& spec);
// Rows are the ModelSpec's equations, columns its parameters.
Eigen::MatrixXd moment_jacobian(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                const ModelSpec& spec);

// r_dt = (y_dt - nu_dt p_dt) / sqrt(nu_dt p_dt).
Eigen::MatrixXd pearson_residuals(const PanelData& data, const Eigen::MatrixXd& p_hat);

}  // namespace spt
