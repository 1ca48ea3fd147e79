#include "sptsae/simstudy.hpp"

#include <fmt/format.h>

#include <array>
#include <chrono>
#include <cmath>
#include <optional>

#include "sptsae/errors.hpp"
#include "sptsae/parallel.hpp"

namespace spt {

ParamVector SimScenario::truth() const {
  ParamVector t;
  t.beta = Eigen::Vector2d(beta0, beta1);
  t.phi1 = phi1;
  t.phi2 = phi2;
  t.rho = rho;
  return t;
}

PanelData scenario_design(const SimScenario& s) {
  if (s.D < 7 || s.T < 1) throw DataError("scenario needs D >= 7 and T >= 1");
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(s.D, s.T);
  Eigen::MatrixXd nu = Eigen::MatrixXd::Constant(s.D, s.T, s.nu);
  Eigen::MatrixXd x(s.D * s.T, 2);
  for (int d = 0; d < s.D; ++d)
    for (int t = 0; t < s.T; ++t) {
      x(d * s.T + t, 0) = 1.0;
      x(d * s.T + t, 1) = ((d + 1) + static_cast<double>(t + 1) / s.T) / s.D;
    }
  return PanelData::make(std::move(y), std::move(nu), std::move(x));
}

ScenarioDraw generate_scenario_data(const SimScenario& s, const ProximityMatrix& w, Rng& rng) {
  PanelData design = scenario_design(s);
  const SarCovariance cov(w, s.rho);
  ParamVector truth = s.truth();
  std::normal_distribution<double> normal;
  ScenarioDraw out;
  out.v1 = sample_sar(cov, rng);
  out.v2.resize(s.D, s.T);
  for (int d = 0; d < s.D; ++d)
    for (int t = 0; t < s.T; ++t) out.v2(d, t) = normal(rng);
  out.p.resize(s.D, s.T);
  for (int d = 0; d < s.D; ++d) {
    for (int t = 0; t < s.T; ++t) {
      out.p(d, t) = linear_predictor_p(truth, design.x.row(design.cell(d, t)), out.v1(d), out.v2(d, t));
      std::poisson_distribution<long long> pois(design.nu(d, t) * out.p(d, t));
      design.y(d, t) = static_cast<double>(pois(rng));
    }
  }
  out.data = std::move(design);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

SimTable run_sim1(const SimScenario& s, const std::vector<FitOption>& options, const FitOptions& base,
                  std::ostream* log) {
  if (s.k < 1) throw DataError("scenario needs k >= 1");
  const ProximityMatrix w = build_seven_diagonal(s.D);
  const ModelSpec spec = ModelSpec::make(s.T >= 2 ? Variant::ST1 : Variant::S1, 2);
  const Eigen::VectorXd truth = s.truth().flat();
  const int n = 5;
  const std::size_t no = options.size();

  std::vector<std::vector<std::optional<Eigen::VectorXd>>> est(no, std::vector<std::optional<Eigen::VectorXd>>(s.k));
  std::vector<std::vector<double>> secs(no, std::vector<double>(s.k, 0.0));
  parallel_for(static_cast<std::size_t>(s.k), s.threads, [&](std::size_t r) {
    Rng rng = make_stream(s.seed, r);
    const auto draw = generate_scenario_data(s, w, rng);
    for (std::size_t o = 0; o < no; ++o) {
      FitOptions fo = base;
      fo.option = options[o];
      fo.moran_mc.threads = 1;
      const auto start = Clock::now();
      try {
        FitResult fit = fit_mm(draw.data, w, spec, fo);
        if (fit.converged) est[o][r] = fit.theta_hat.flat();
      } catch (const NumericalError&) {
      }
      secs[o][r] = seconds_since(start);
    }
  });

  SimTable table;
  table.study = "sim1";
  table.scenario = s;
  table.columns = {"beta0", "beta1", "phi1", "phi2", "rho"};
  for (std::size_t o = 0; o < no; ++o) {
    SimRow row;
    row.group = option_name(options[o]);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n), sq = Eigen::VectorXd::Zero(n);
    double total_secs = 0.0;
    for (int r = 0; r < s.k; ++r) {
      total_secs += secs[o][r];
      if (!est[o][r]) {
        ++row.failures;
        continue;
      }
      const Eigen::VectorXd e = *est[o][r] - truth;
      sum += e;
      sq += e.cwiseAbs2();
      ++row.replicates;
    }
    row.seconds_per_fit = total_secs / s.k;
    for (int j = 0; j < n; ++j) {
      const double m = row.replicates > 0 ? row.replicates : 1;
      row.bias.push_back(sum(j) / m);
      row.rmse.push_back(std::sqrt(sq(j) / m));
    }
    if (log)
      *log << fmt::format("sim1 {}: {} replicates, {} failures, {:.4f} s per fit\n", row.group, row.replicates,
                          row.failures, row.seconds_per_fit);
    table.rows.push_back(std::move(row));
  }
  return table;
}

SimTable run_sim2(const SimScenario& s, const FitOptions& base, std::ostream* log) {
  if (s.k < 1) throw DataError("scenario needs k >= 1");
  if (s.T < 2) throw DataError("the predictor study needs T >= 2");
  const ProximityMatrix w = build_seven_diagonal(s.D);
  const ModelSpec spec = ModelSpec::make(Variant::ST1, 2);
  const ParamVector truth = s.truth();
  const SarCovariance cov_true(w, s.rho);
  constexpr int kinds = 4;  // bp-plugin, bp, plugin, ebp

  std::vector<std::optional<std::array<Eigen::MatrixXd, kinds>>> err(s.k);
  std::vector<double> secs(s.k, 0.0);
  parallel_for(static_cast<std::size_t>(s.k), s.threads, [&](std::size_t r) {
    const auto start = Clock::now();
    Rng rng = make_stream(s.seed, r);
    const auto draw = generate_scenario_data(s, w, rng);
    FitOptions fo = base;
    fo.option = FitOption::opt2;
    fo.moran_mc.threads = 1;
    try {
      const FitResult fit = fit_mm(draw.data, w, spec, fo);
      if (!fit.converged) return;
      McConfig mc{s.s1, s.s2, stream_seed(s.seed, static_cast<std::uint64_t>(s.k) + r), 1};
      const auto bp = ebp_approx_p(truth, draw.data, cov_true, mc);
      const auto bp_plug = plug_in_p(truth, draw.data, *bp.v1_hat, *bp.v2_hat);
      const SarCovariance cov_hat(w, fit.theta_hat.rho);
      const auto ebp = ebp_approx_p(fit.theta_hat, draw.data, cov_hat, mc);
      const auto plug = plug_in_p(fit.theta_hat, draw.data, *ebp.v1_hat, *ebp.v2_hat);
      err[r] = std::array<Eigen::MatrixXd, kinds>{bp_plug.p_hat - draw.p, bp.p_hat - draw.p, plug.p_hat - draw.p,
                                                  ebp.p_hat - draw.p};
    } catch (const NumericalError&) {
    }
    secs[r] = seconds_since(start);
  });

  SimTable table;
  table.study = "sim2";
  table.scenario = s;
  table.columns = {"p"};
  table.scale = 100.0;
  const char* names[kinds] = {"bp-plugin", "bp", "plugin", "ebp"};
  int ok = 0, failures = 0;
  std::array<Eigen::MatrixXd, kinds> sum, sq;
  for (int k = 0; k < kinds; ++k) {
    sum[k] = Eigen::MatrixXd::Zero(s.D, s.T);
    sq[k] = Eigen::MatrixXd::Zero(s.D, s.T);
  }
  double total_secs = 0.0;
  for (int r = 0; r < s.k; ++r) {
    total_secs += secs[r];
    if (!err[r]) {
      ++failures;
      continue;
    }
    ++ok;
    for (int k = 0; k < kinds; ++k) {
      sum[k] += (*err[r])[k];
      sq[k] += (*err[r])[k].cwiseAbs2();
    }
  }
  const double m = ok > 0 ? ok : 1;
  for (int k = 0; k < kinds; ++k) {
    SimRow row;
    row.group = names[k];
    row.replicates = ok;
    row.failures = failures;
    row.seconds_per_fit = total_secs / s.k;
    row.bias.push_back((sum[k] / m).cwiseAbs().mean());
    row.rmse.push_back((sq[k] / m).cwiseSqrt().mean());
    table.rows.push_back(std::move(row));
  }
  if (log)
    *log << fmt::format("sim2: {} replicates, {} failures, {:.3f} s per replicate\n", ok, failures,
                        total_secs / s.k);
  return table;
}

std::string sim_table_csv(const SimTable& table) {
  const auto& s = table.scenario;
  std::string out;
  if (table.study == "sim1") {
    out = "T,rho_true,option,measure";
    for (const auto& c : table.columns) out += "," + c;
    out += ",replicates,failures\n";
    for (const auto& row : table.rows) {
      for (int m = 0; m < 2; ++m) {
        out += fmt::format("{},{:.17g},{},{}", s.T, s.rho, row.group, m == 0 ? "bias" : "rmse");
        for (double v : (m == 0 ? row.bias : row.rmse)) out += fmt::format(",{:.17g}", v);
        out += fmt::format(",{},{}\n", row.replicates, row.failures);
      }
    }
  } else {
    out = "T,rho_true,predictor,bias_x100,rmse_x100,replicates,failures\n";
    for (const auto& row : table.rows)
      out += fmt::format("{},{:.17g},{},{:.17g},{:.17g},{},{}\n", s.T, s.rho, row.group, table.scale * row.bias[0],
                         table.scale * row.rmse[0], row.replicates, row.failures);
  }
  return out;
}

}  // namespace spt
