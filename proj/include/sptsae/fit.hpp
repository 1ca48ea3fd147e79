#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "sptsae/model.hpp"
#include "sptsae/predict.hpp"
#include "sptsae/spatial.hpp"

namespace spt {

enum class FitOption { opt1, opt2 };

std::string option_name(FitOption o);
FitOption parse_option(const std::string& name);

struct FitOptions {
  FitOption option = FitOption::opt2;
  int max_iter = 100;
  // Convergence threshold on the scaled residual max-norm, where each
  // equation is divided by max(1, |observed moment|).
  double tol = 1e-8;
  int max_halvings = 10;
  // Draws for the rho = 0 effect predictions behind the Opt2 Moran estimate.
  McConfig moran_mc{50, 50, 0x6d6f72616eULL, 1};
  // On failure, retry with phi2 = 0, then phi1 = 0, then both.
  bool boundary_fallback = true;
};

struct TraceEntry {
  Eigen::VectorXd theta;  // flattened p + 3 vector
  double residual_norm = 0.0;  // scaled max-norm
  double merit = 0.0;          // scaled 2-norm, the quantity step-halving decreases
  double step_norm = 0.0;
  int halvings = 0;
};

struct FitResult {
  ParamVector theta_hat;
  ModelSpec spec;         // requested model
  ModelSpec solved_spec;  // equations and parameters of the final solve
  FitOption option = FitOption::opt1;
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
  std::vector<TraceEntry> trace;
  ParamVector seed_used;
  std::optional<double> moran_rho;  // Opt2 only
  std::string boundary;             // "", "phi2=0", "phi1=0" or "phi1=phi2=0"
  std::string message;
};

// Fixed-effects Poisson regression with offset log(nu), by IRLS.
Eigen::VectorXd fit_glm_poisson(const PanelData& data, int max_iter = 50);

// beta from the Poisson GLM, phi1 = phi2 = 0.1, rho from Moran's I of the
// domain means of the GLM Pearson residuals (clamped to (-0.9, 0.9), 0 when undefined).
ParamVector seed_parameters(const PanelData& data, const ProximityMatrix& w);

// Newton-Raphson with step-halving on the equations and parameters of `spec`;
// rho and the betas outside spec.params stay at their value in `start`,
// phis outside it are zero.
FitResult solve_mm(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec, const ParamVector& start,
                   const FitOptions& opts);

FitResult fit_mm(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec, const FitOptions& opts,
                 std::optional<ParamVector> seed = std::nullopt);

// Model with rho = 0 fitted in the first Opt2 stage.
ModelSpec rho_free_counterpart(const ModelSpec& spec);

}  // namespace spt
