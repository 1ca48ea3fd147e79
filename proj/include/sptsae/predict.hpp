#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>

#include "sptsae/model.hpp"
#include "sptsae/spatial.hpp"

namespace spt {

struct McConfig {
  int s1 = 500;  // draws of v1 before antithetic reflection
  int s2 = 700;  // draws of v2 before antithetic reflection
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

enum class PredictorKind { ebp_exact, ebp_approx, plug_in, synthetic, bp_plug_in };

std::string predictor_name(PredictorKind k);
PredictorKind parse_predictor(const std::string& name);

struct PredictionSet {
  PredictorKind kind = PredictorKind::synthetic;
  Eigen::MatrixXd p_hat;   // D x T
  Eigen::MatrixXd mu_hat;  // D x T, nu * p_hat
  std::optional<Eigen::VectorXd> v1_hat;
  std::optional<Eigen::MatrixXd> v2_hat;  // D x T
};

struct AntitheticDraws {
  Eigen::MatrixXd v1;  // 2 s1 x D; row s1 + i is the negative of row i
  Eigen::MatrixXd v2;  // 2 s2 x (D*T), same reflection
};

// v1 rows from N(0, gamma) (stream 0 of cfg.seed), v2 i.i.d. N(0, 1) (stream 1).
AntitheticDraws antithetic_draws(const SarCovariance& cov, int D, int T, const McConfig& cfg);

enum class EbpMode { exact, approx };

struct RandomEffects {
  Eigen::VectorXd v1;  // D
  Eigen::MatrixXd v2;  // D x T
};

// EBP of p together with the EBPs of the effects. The exact version integrates
// over the joint effect vector; the approximate one works domain by domain.
PredictionSet ebp_exact_p(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                          const McConfig& cfg);
PredictionSet ebp_approx_p(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                           const McConfig& cfg);
RandomEffects ebp_random_effects(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                 const McConfig& cfg, EbpMode mode);

PredictionSet plug_in_p(const ParamVector& theta, const PanelData& data, const Eigen::VectorXd& v1_hat,
                        const Eigen::MatrixXd& v2_hat);
PredictionSet synthetic_p(const ParamVector& theta, const PanelData& data);
// Plug-in at the true parameters with best-predicted effects (simulation use only).
PredictionSet bp_plug_in_p(const ParamVector& theta_true, const PanelData& data, const SarCovariance& cov,
                           const McConfig& cfg, EbpMode mode = EbpMode::approx);

// Dispatch by kind; plug_in predicts the effects with the approximate EBP.
PredictionSet predict(PredictorKind kind, const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                      const McConfig& cfg);

}  // namespace spt
