#include "sptsae/bootstrap.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>

#include "sptsae/errors.hpp"
#include "sptsae/parallel.hpp"

namespace spt {

std::string test_name(TestKind k) {
  switch (k) {
    case TestKind::phi1: return "phi1";
    case TestKind::rho: return "rho";
    case TestKind::phi2: return "phi2";
  }
  return "unknown";
}

TestKind parse_test(const std::string& name) {
  for (auto k : {TestKind::phi1, TestKind::rho, TestKind::phi2})
    if (test_name(k) == name) return k;
  throw DataError(fmt::format("unknown null '{}' (expected phi1, rho or phi2)", name));
}

BootstrapSample generate_bootstrap_sample(const ParamVector& theta, const PanelData& data, const SarCovariance& cov,
                                          Rng& rng) {
  if (theta.p() != data.p) throw DataError("parameter vector does not match p");
  BootstrapSample out;
  out.v1 = Eigen::VectorXd::Zero(data.D);
  out.v2 = Eigen::MatrixXd::Zero(data.D, data.T);
  if (theta.phi1 != 0.0) out.v1 = sample_sar(cov, rng);
  if (theta.phi2 != 0.0) {
    std::normal_distribution<double> normal;
    for (int d = 0; d < data.D; ++d)
      for (int t = 0; t < data.T; ++t) out.v2(d, t) = normal(rng);
  }
  out.data = data;
  out.p.resize(data.D, data.T);
  for (int d = 0; d < data.D; ++d) {
    for (int t = 0; t < data.T; ++t) {
      const double p = linear_predictor_p(theta, data.x.row(data.cell(d, t)), out.v1(d), out.v2(d, t));
      out.p(d, t) = p;
      std::poisson_distribution<long long> pois(data.nu(d, t) * p);
      out.data.y(d, t) = static_cast<double>(pois(rng));
    }
  }
  return out;
}

PanelData generate_bootstrap_data(const ParamVector& theta, const PanelData& data, const SarCovariance& cov, Rng& rng) {
  return generate_bootstrap_sample(theta, data, cov, rng).data;
}

ModelSpec test_alternative(TestKind kind, const PanelData& data) {
  if (data.T >= 2) return ModelSpec::make(Variant::ST1, data.p);
  if (kind == TestKind::phi2) throw DataError("the phi2 test needs T >= 2");
  return ModelSpec::make(Variant::S1, data.p);
}

ModelSpec test_null(TestKind kind, const PanelData& data) {
  if (data.T >= 2) {
    switch (kind) {
      case TestKind::phi1: return ModelSpec::make(Variant::T1_2, data.p);
      case TestKind::rho: return ModelSpec::make(Variant::T1, data.p);
      case TestKind::phi2: return ModelSpec::make(Variant::ST1_1, data.p);
    }
  }
  switch (kind) {
    case TestKind::phi1: return ModelSpec::make(Variant::M0, data.p);
    case TestKind::rho: return ModelSpec::make(Variant::M1, data.p);
    case TestKind::phi2: break;
  }
  throw DataError("the phi2 test needs T >= 2");
}

namespace {

double statistic(TestKind kind, const ParamVector& theta) {
  switch (kind) {
    case TestKind::phi1: return theta.phi1;
    case TestKind::rho: return std::abs(theta.rho);
    case TestKind::phi2: return theta.phi2;
  }
  return 0.0;
}

void check_failures(int failures, int b, double max_rate, const char* what) {
  if (failures > max_rate * b)
    throw NumericalError(fmt::format("{}: {} of {} bootstrap refits failed (limit {:.0f}%)", what, failures, b,
                                     100.0 * max_rate));
}

void check_options(const BootstrapOptions& opts) {
  if (opts.b < 1) throw DataError("bootstrap replicate count must be >= 1");
}

std::optional<FitResult> try_fit(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec,
                                 const FitOptions& opts) {
  try {
    FitResult r = fit_mm(data, w, spec, opts);
    if (r.converged) return r;
  } catch (const NumericalError&) {
  }
  return std::nullopt;
}

FitResult observed_fit(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec, const FitOptions& opts) {
  FitResult r = fit_mm(data, w, spec, opts);
  if (!r.converged)
    throw NumericalError(fmt::format("fit of model {} to the data did not converge: {}", variant_name(spec.variant),
                                     r.message));
  return r;
}

}  // namespace

BootstrapTestResult bootstrap_test(TestKind kind, const PanelData& data, const ProximityMatrix& w,
                                   const BootstrapOptions& opts) {
  check_options(opts);
  BootstrapTestResult res;
  res.kind = kind;
  res.b = opts.b;
  res.alt_model = test_alternative(kind, data);
  res.null_model = test_null(kind, data);
  res.alt_fit = observed_fit(data, w, res.alt_model, opts.fit);
  res.null_fit = observed_fit(data, w, res.null_model, opts.fit);
  res.statistic_observed = statistic(kind, res.alt_fit.theta_hat);

  const ParamVector theta0 = constrain_to(res.null_fit.theta_hat, res.null_model);
  const SarCovariance cov0(w, theta0.rho);
  std::vector<std::optional<double>> stats(opts.b);
  parallel_for(static_cast<std::size_t>(opts.b), opts.threads, [&](std::size_t r) {
    Rng rng = make_stream(opts.seed, r);
    const PanelData boot = generate_bootstrap_data(theta0, data, cov0, rng);
    if (auto fit = try_fit(boot, w, res.alt_model, opts.fit)) stats[r] = statistic(kind, fit->theta_hat);
  });

  for (const auto& s : stats) {
    if (!s) {
      ++res.failures;
      continue;
    }
    res.statistics_boot.push_back(*s);
    if (*s > res.statistic_observed) ++res.exceedances;
  }
  check_failures(res.failures, opts.b, opts.max_failure_rate, "bootstrap test");
  res.p_value = static_cast<double>(res.exceedances) / static_cast<double>(res.statistics_boot.size());
  return res;
}

BootstrapTestResult test_phi1(const PanelData& data, const ProximityMatrix& w, const BootstrapOptions& opts) {
  return bootstrap_test(TestKind::phi1, data, w, opts);
}

BootstrapTestResult test_rho(const PanelData& data, const ProximityMatrix& w, const BootstrapOptions& opts) {
  return bootstrap_test(TestKind::rho, data, w, opts);
}

BootstrapTestResult test_phi2(const PanelData& data, const ProximityMatrix& w, const BootstrapOptions& opts) {
  return bootstrap_test(TestKind::phi2, data, w, opts);
}

MseEstimate bootstrap_mse(const FitResult& fit, const PanelData& data, const ProximityMatrix& w, PredictorKind kind,
                          const McConfig& cfg, const BootstrapOptions& opts) {
  check_options(opts);
  if (!fit.converged) throw NumericalError("bootstrap MSE needs a converged fit");
  const ParamVector theta = fit.theta_hat;
  const SarCovariance cov(w, theta.rho);
  MseEstimate out;
  out.b = opts.b;
  McConfig base_cfg = cfg;
  base_cfg.threads = opts.threads;
  out.p_hat = predict(kind, theta, data, cov, base_cfg).p_hat;

  std::vector<std::optional<Eigen::MatrixXd>> sq(opts.b);
  parallel_for(static_cast<std::size_t>(opts.b), opts.threads, [&](std::size_t r) {
    Rng rng = make_stream(opts.seed, r);
    const auto sample = generate_bootstrap_sample(theta, data, cov, rng);
    auto refit = try_fit(sample.data, w, fit.spec, opts.fit);
    if (!refit) return;
    try {
      McConfig rc = cfg;
      rc.seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(opts.b) + r);
      rc.threads = 1;
      const SarCovariance cov_r(w, refit->theta_hat.rho);
      const auto pred = predict(kind, refit->theta_hat, sample.data, cov_r, rc);
      sq[r] = (pred.p_hat - sample.p).array().square().matrix();
    } catch (const NumericalError&) {
    }
  });

  out.mse = Eigen::MatrixXd::Zero(data.D, data.T);
  int ok = 0;
  for (const auto& s : sq) {
    if (!s) {
      ++out.failures;
      continue;
    }
    out.mse += *s;
    ++ok;
  }
  check_failures(out.failures, opts.b, opts.max_failure_rate, "bootstrap MSE");
  out.mse /= ok;
  out.rrmse = out.mse.array().sqrt() / out.p_hat.array();
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

ConfidenceIntervals bootstrap_ci(const FitResult& fit, const PanelData& data, const ProximityMatrix& w, double level,
                                 const BootstrapOptions& opts) {
  check_options(opts);
  if (!(level > 0.0 && level < 1.0)) throw DataError("confidence level must lie in (0, 1)");
  if (!fit.converged) throw NumericalError("bootstrap intervals need a converged fit");
  const ParamVector theta = fit.theta_hat;
  const SarCovariance cov(w, theta.rho);
  std::vector<std::optional<Eigen::VectorXd>> est(opts.b);
  parallel_for(static_cast<std::size_t>(opts.b), opts.threads, [&](std::size_t r) {
    Rng rng = make_stream(opts.seed, r);
    const PanelData boot = generate_bootstrap_data(theta, data, cov, rng);
    if (auto refit = try_fit(boot, w, fit.spec, opts.fit)) est[r] = refit->theta_hat.flat();
  });
  ConfidenceIntervals out;
  out.level = level;
  out.b = opts.b;
  const int n = data.p + 3;
  std::vector<std::vector<double>> cols(n);
  for (const auto& e : est) {
    if (!e) {
      ++out.failures;
      continue;
    }
    for (int k = 0; k < n; ++k) cols[k].push_back((*e)(k));
  }
  check_failures(out.failures, opts.b, opts.max_failure_rate, "bootstrap intervals");
  out.lo.resize(n);
  out.hi.resize(n);
  const double a = 0.5 * (1.0 - level);
  for (int k = 0; k < n; ++k) {
    out.lo(k) = quantile(cols[k], a);
    out.hi(k) = quantile(cols[k], 1.0 - a);
  }
  return out;
}

}  // namespace spt
