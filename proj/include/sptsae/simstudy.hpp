#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "sptsae/fit.hpp"
#include "sptsae/model.hpp"
#include "sptsae/predict.hpp"
#include "sptsae/spatial.hpp"

namespace spt {

struct SimScenario {
  int D = 100;
  int T = 4;
  double rho = 0.3;
  double beta0 = -3.0;
  double beta1 = 0.8;
  double phi1 = 0.5;
  double phi2 = 0.5;
  double nu = 100.0;
  int k = 200;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  int s1 = 500;  // Monte Carlo sizes of the predictors in the second study
  int s2 = 700;

  ParamVector truth() const;
};

struct ScenarioDraw {
  PanelData data;
  Eigen::VectorXd v1;
  Eigen::MatrixXd v2;
  Eigen::MatrixXd p;
};

// Design (1, x_dt) with x_dt = (d + t/T)/D for 1-based d, t; constant nu.
PanelData scenario_design(const SimScenario& s);
ScenarioDraw generate_scenario_data(const SimScenario& s, const ProximityMatrix& w, Rng& rng);

struct SimRow {
  std::string group;             // option or predictor
  std::vector<double> bias;      // one entry per column
  std::vector<double> rmse;
  int replicates = 0;            // successful replicates
  int failures = 0;
  double seconds_per_fit = 0.0;  // wall clock, reported via the log only
};

struct SimTable {
  std::string study;  // "sim1" or "sim2"
  SimScenario scenario;
  std::vector<std::string> columns;
  std::vector<SimRow> rows;
  double scale = 1.0;  // sim2 entries are reported x100
};

// Bias and RMSE of each parameter estimate over K replicates, per option.
SimTable run_sim1(const SimScenario& s, const std::vector<FitOption>& options, const FitOptions& base = {},
                  std::ostream* log = nullptr);
// Mean over cells of |bias| and of RMSE for BP-plug-in, BP, plug-in and EBP
// (approximate versions); empirical predictors use the Opt2 fit.
SimTable run_sim2(const SimScenario& s, const FitOptions& base = {}, std::ostream* log = nullptr);

std::string sim_table_csv(const SimTable& table);

}  // namespace spt
