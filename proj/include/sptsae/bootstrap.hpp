#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "sptsae/fit.hpp"
#include "sptsae/model.hpp"
#include "sptsae/predict.hpp"
#include "sptsae/rng.hpp"
#include "sptsae/spatial.hpp"

namespace spt {

enum class TestKind { phi1, rho, phi2 };

std::string test_name(TestKind k);
TestKind parse_test(const std::string& name);

struct BootstrapOptions {
  int b = 99;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  FitOptions fit;                 // refits inside replicates
  double max_failure_rate = 0.1;  // above this the run is an error
};

struct BootstrapTestResult {
  TestKind kind = TestKind::phi1;
  ModelSpec null_model;
  ModelSpec alt_model;
  FitResult alt_fit;
  FitResult null_fit;
  double statistic_observed = 0.0;
  std::vector<double> statistics_boot;  // successful replicates, in replicate order
  int exceedances = 0;
  double p_value = 0.0;
  int b = 0;
  int failures = 0;
};

struct MseEstimate {
  Eigen::MatrixXd p_hat;  // predictor on the observed data
  Eigen::MatrixXd mse;
  Eigen::MatrixXd rrmse;
  int b = 0;
  int failures = 0;
};

struct ConfidenceIntervals {
  Eigen::VectorXd lo;  // flattened p + 3 order
  Eigen::VectorXd hi;
  double level = 0.95;
  int b = 0;
  int failures = 0;
};

struct BootstrapSample {
  PanelData data;
  Eigen::VectorXd v1;  // zeros when phi1 = 0
  Eigen::MatrixXd v2;  // zeros when phi2 = 0
  Eigen::MatrixXd p;   // true proportions of the resample
};

// Resample from theta: v1 ~ N(0, gamma) drawn only when phi1 != 0 (cov at
// theta.rho), v2 ~ N(0, 1) only when phi2 != 0, then y ~ Poisson(nu p).
BootstrapSample generate_bootstrap_sample(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                          Rng& rng);
PanelData generate_bootstrap_data(const ParamVector& theta, const PanelData& data, const SarCovariance& cov, Rng& rng);

// Null and alternative models of each test. With T = 1 the alternative is S1
// (rho test against model 1, phi1 test against model 0); phi2 needs T >= 2.
ModelSpec test_alternative(TestKind kind, const PanelData& data);
ModelSpec test_null(TestKind kind, const PanelData& data);

BootstrapTestResult bootstrap_test(TestKind kind, const PanelData& data, const ProximityMatrix& w,
                                   const BootstrapOptions& opts);
BootstrapTestResult test_phi1(const PanelData& data, const ProximityMatrix& w, const BootstrapOptions& opts);
BootstrapTestResult test_rho(const PanelData& data, const ProximityMatrix& w, const BootstrapOptions& opts);
BootstrapTestResult test_phi2(const PanelData& data, const ProximityMatrix& w, const BootstrapOptions& opts);

// Parametric bootstrap MSE of a predictor around a converged fit.
MseEstimate bootstrap_mse(const FitResult& fit, const PanelData& data, const ProximityMatrix& w, PredictorKind kind,
                          const McConfig& cfg, const BootstrapOptions& opts);

// Percentile intervals (type-7 quantiles) of refitted parameters.
ConfidenceIntervals bootstrap_ci(const FitResult& fit, const PanelData& data, const ProximityMatrix& w, double level,
                                 const BootstrapOptions& opts);

// Type-7 sample quantile.
double quantile(std::vector<double> values, double q);

}  // namespace spt
