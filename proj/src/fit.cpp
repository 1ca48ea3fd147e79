#include "sptsae/fit.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "sptsae/errors.hpp"

namespace spt {

std::string option_name(FitOption o) { return o == FitOption::opt1 ? "opt1" : "opt2"; }

FitOption parse_option(const std::string& name) {
  if (name == "opt1") return FitOption::opt1;
  if (name == "opt2") return FitOption::opt2;
  throw DataError(fmt::format("unknown option '{}' (expected opt1 or opt2)", name));
}

Eigen::VectorXd fit_glm_poisson(const PanelData& data, int max_iter) {
  const int n = data.D * data.T;
  Eigen::VectorXd y(n), nu(n);
  for (int d = 0; d < data.D; ++d)
    for (int t = 0; t < data.T; ++t) {
      y(data.cell(d, t)) = data.y(d, t);
      nu(data.cell(d, t)) = data.nu(d, t);
    }
  if (y.sum() == 0.0) throw NumericalError("Poisson GLM has no finite solution: every count is zero");
  const Eigen::MatrixXd& x = data.x;
  // Start from least squares on the empirical log rates.
  const Eigen::VectorXd z0 = ((y.array() + 0.5) / nu.array()).log().matrix();
  Eigen::VectorXd beta = x.colPivHouseholderQr().solve(z0);

  auto deviance = [&](const Eigen::VectorXd& b) {
    const Eigen::ArrayXd mu = nu.array() * (x * b).array().exp();
    double dev = 0.0;
    for (int i = 0; i < n; ++i) dev += mu(i) - (y(i) > 0 ? y(i) * std::log(mu(i)) : 0.0);
    return dev;
  };
  double dev = deviance(beta);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = x * beta;
    const Eigen::ArrayXd mu = nu.array() * eta.array().exp();
    const Eigen::VectorXd score = x.transpose() * (y.array() - mu).matrix();
    const Eigen::MatrixXd info = x.transpose() * mu.matrix().asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw NumericalError("Poisson GLM information matrix is singular");
    const Eigen::VectorXd step = ldlt.solve(score);
    double lambda = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_dev = deviance(next);
    for (int h = 0; h < 30 && !(next_dev <= dev + 1e-12 * std::abs(dev)); ++h) {
      lambda *= 0.5;
      next = beta + lambda * step;
      next_dev = deviance(next);
    }
    if (!std::isfinite(next_dev)) throw NumericalError("Poisson GLM diverged");
    beta = next;
    dev = next_dev;
    if (step.lpNorm<Eigen::Infinity>() * lambda <= 1e-12 * (1.0 + beta.lpNorm<Eigen::Infinity>())) return beta;
  }
  const Eigen::ArrayXd mu = nu.array() * (x * beta).array().exp();
  const Eigen::VectorXd score = x.transpose() * (y.array() - mu).matrix();
  if (score.lpNorm<Eigen::Infinity>() <= 1e-8 * (1.0 + y.sum())) return beta;
  throw NumericalError(fmt::format("Poisson GLM did not converge in {} iterations", max_iter));
}

ParamVector seed_parameters(const PanelData& data, const ProximityMatrix& w) {
  ParamVector seed;
  seed.beta = fit_glm_poisson(data);
  seed.phi1 = 0.1;
  seed.phi2 = 0.1;
  seed.rho = 0.0;
  if (data.D >= 2) {
    const Eigen::VectorXd xb = data.x * seed.beta;
    std::vector<double> resid(data.D, 0.0);
    for (int d = 0; d < data.D; ++d) {
      for (int t = 0; t < data.T; ++t) {
        const double mu = data.nu(d, t) * std::exp(xb(data.cell(d, t)));
        resid[d] += (data.y(d, t) - mu) / std::sqrt(mu) / data.T;
      }
    }
    try {
      seed.rho = std::clamp(morans_i(resid, w), -0.9, 0.9);
    } catch (const NumericalError&) {
      seed.rho = 0.0;
    }
  }
  return seed;
}

ModelSpec rho_free_counterpart(const ModelSpec& spec) {
  switch (spec.variant) {
    case Variant::ST1: return ModelSpec::make(Variant::T1, spec.p);
    case Variant::ST1_1:
    case Variant::S1: return ModelSpec::make(Variant::M1, spec.p);
    default: return spec;
  }
}

namespace {

constexpr double kRhoBound = 0.999;

struct Evaluation {
  Eigen::VectorXd f;  // scaled active residuals
  double merit = std::numeric_limits<double>::infinity();
  double norm = std::numeric_limits<double>::infinity();
  bool ok = false;
};

class CovCache {
 public:
  explicit CovCache(const ProximityMatrix& w) : w_(w) {}
  const SarCovariance& at(double rho) {
    if (!cov_ || cov_->rho() != rho) cov_ = std::make_unique<SarCovariance>(w_, rho);
    return *cov_;
  }

 private:
  const ProximityMatrix& w_;
  std::unique_ptr<SarCovariance> cov_;
};

Eigen::VectorXd observed_scale(const MomentSystem& sys, const ModelSpec& spec) {
  Eigen::VectorXd s(spec.equations.size());
  for (std::size_t i = 0; i < spec.equations.size(); ++i)
    s(i) = 1.0 / std::max(1.0, std::abs(sys.observed(spec.equations[i])));
  return s;
}

Evaluation evaluate(const Eigen::VectorXd& theta, const PanelData& data, CovCache& cache, const ModelSpec& spec) {
  Evaluation e;
  try {
    const auto pv = ParamVector::from_flat(theta);
    const auto sys = evaluate_moments(pv, data, cache.at(pv.rho), false);
    const Eigen::VectorXd scale = observed_scale(sys, spec);
    e.f.resize(spec.equations.size());
    for (std::size_t i = 0; i < spec.equations.size(); ++i) e.f(i) = sys.f(spec.equations[i]) * scale(i);
    e.merit = e.f.norm();
    e.norm = e.f.lpNorm<Eigen::Infinity>();
    e.ok = std::isfinite(e.merit);
  } catch (const NumericalError&) {
    e.ok = false;
  }
  return e;
}

void project(Eigen::VectorXd& theta, int p) {
  theta(p) = std::abs(theta(p));
  theta(p + 1) = std::abs(theta(p + 1));
  theta(p + 2) = std::clamp(theta(p + 2), -kRhoBound, kRhoBound);
}

void check_spec_data(const ModelSpec& spec, const PanelData& data) {
  if (spec.p != data.p) throw DataError(fmt::format("model has p = {} but data has p = {}", spec.p, data.p));
  if (spec.variant == Variant::S1 && data.T != 1)
    throw DataError(fmt::format("model s1 requires T = 1, data has T = {}", data.T));
  if (spec.uses_phi2() && data.T < 2)
    throw DataError(fmt::format("model {} needs T >= 2 to identify phi2", variant_name(spec.variant)));
  if (spec.has_equation(spec.p + 2) && data.D < 2) throw DataError("the cross-domain equation needs D >= 2");
  if (spec.params.size() != spec.equations.size()) throw DataError("model has unequal parameter and equation counts");
}

}  // namespace

FitResult solve_mm(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec, const ParamVector& start,
                   const FitOptions& opts) {
  if (!(opts.tol > 0.0) || opts.max_iter < 1) throw DataError("fit options need tol > 0 and max_iter >= 1");
  if (w.size() != data.D) throw DataError("proximity matrix size does not match the panel");
  check_spec_data(spec, data);
  const int p = data.p;
  const int m = static_cast<int>(spec.params.size());

  FitResult res;
  res.spec = spec;
  res.solved_spec = spec;
  res.seed_used = start;
  CovCache cache(w);

  Eigen::VectorXd theta = constrain_to(start, spec).flat();
  project(theta, p);
  Evaluation cur = evaluate(theta, data, cache, spec);
  if (!cur.ok) {
    res.theta_hat = ParamVector::from_flat(theta);
    res.message = "moment system not finite at the starting point";
    return res;
  }
  res.trace.push_back({theta, cur.norm, cur.merit, 0.0, 0});

  auto finish = [&](bool converged, std::string msg) {
    res.theta_hat = ParamVector::from_flat(theta);
    res.residual_norm = cur.norm;
    res.converged = converged;
    res.message = std::move(msg);
    return res;
  };

  for (int it = 1; it <= opts.max_iter; ++it) {
    if (cur.norm <= opts.tol) return finish(true, "converged");
    res.iterations = it;
    const auto pv = ParamVector::from_flat(theta);
    MomentSystem sys;
    try {
      sys = evaluate_moments(pv, data, cache.at(pv.rho), true);
    } catch (const OverflowError& e) {
      return finish(false, e.what());
    }
    const Eigen::VectorXd scale = observed_scale(sys, spec);
    Eigen::MatrixXd h(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) h(i, j) = sys.h(spec.equations[i], spec.params[j]) * scale(i);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(h);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14) || !h.allFinite())
      throw NumericalError(fmt::format("singular Jacobian at Newton iteration {} (rcond {:.3g})", it, rcond));
    const Eigen::VectorXd delta = lu.solve(cur.f);

    double lambda = 1.0;
    int halvings = 0;
    Eigen::VectorXd trial = theta;
    Evaluation next;
    for (;;) {
      trial = theta;
      for (int j = 0; j < m; ++j) trial(spec.params[j]) -= lambda * delta(j);
      project(trial, p);
      next = evaluate(trial, data, cache, spec);
      if (next.ok && next.merit < cur.merit) break;
      if (halvings >= opts.max_halvings) break;
      lambda *= 0.5;
      ++halvings;
    }
    if (!(next.ok && next.merit < cur.merit)) {
      return finish(false, fmt::format("step-halving failed to reduce the residual at iteration {}", it));
    }
    const double step_norm = (trial - theta).lpNorm<Eigen::Infinity>();
    theta = trial;
    cur = next;
    res.trace.push_back({theta, cur.norm, cur.merit, step_norm, halvings});
    if (theta.norm() > 1e3) return finish(false, "parameter vector diverged (norm > 1e3)");
    if (cur.norm > opts.tol && step_norm <= 1e-15 * (1.0 + theta.lpNorm<Eigen::Infinity>()))
      return finish(false, fmt::format("Newton steps stalled at iteration {}", it));
  }
  if (cur.norm <= opts.tol) return finish(true, "converged");
  return finish(false, fmt::format("no convergence after {} iterations", opts.max_iter));
}

namespace {

struct Candidate {
  ModelSpec spec;
  std::string label;
  std::vector<int> dropped_equations;
};

// Boundary submodels of `spec`, in the order they are tried.
std::vector<Candidate> boundary_candidates(const ModelSpec& spec) {
  const int p = spec.p;
  const int phi1 = spec.phi1_index(), phi2 = spec.phi2_index(), rho = spec.rho_index();
  const int dom = p, cell = p + 1, cross = p + 2;
  auto drop_phi1 = [&](ModelSpec s, std::vector<int>& dropped) {
    if (s.has_param(phi1)) {
      s = s.without(phi1, dom);
      dropped.push_back(dom);
    }
    if (s.has_param(rho)) {
      s = s.without(rho, cross);
      dropped.push_back(cross);
    }
    return s;
  };
  std::vector<Candidate> out;
  const bool has1 = spec.has_param(phi1), has2 = spec.has_param(phi2);
  if (has2) out.push_back({spec.without(phi2, cell), "phi2=0", {cell}});
  if (has1) {
    Candidate c{spec, "phi1=0", {}};
    c.spec = drop_phi1(spec, c.dropped_equations);
    out.push_back(c);
  }
  if (has1 && has2) {
    Candidate c{spec, "phi1=phi2=0", {}};
    c.spec = drop_phi1(spec, c.dropped_equations).without(phi2, cell);
    c.dropped_equations.push_back(cell);
    out.push_back(c);
  }
  return out;
}

FitResult solve_with_fallback(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec,
                              const ParamVector& start, const FitOptions& opts) {
  FitResult primary;
  std::string primary_error;
  try {
    primary = solve_mm(data, w, spec, start, opts);
    if (primary.converged || !opts.boundary_fallback) return primary;
  } catch (const NumericalError& e) {
    if (!opts.boundary_fallback) throw;
    primary_error = e.what();
  }

  std::optional<FitResult> first_converged;
  if (spec.uses_spatial()) {
    // The cross-product moment grows with rho; when no interior root exists the
    // constrained solution sits at the bound the residual points to.
    for (double bound : {-kRhoBound, kRhoBound}) {
      ParamVector s = start;
      s.rho = bound;
      FitResult r;
      try {
        r = solve_with_fallback(data, w, spec.with_fixed_rho(), s, opts);
      } catch (const NumericalError&) {
        continue;
      }
      if (!r.converged) continue;
      CovCache cache(w);
      const double f_cross = evaluate_moments(r.theta_hat, data, cache.at(bound), false).f(spec.p + 2);
      r.spec = spec;
      r.boundary = fmt::format("rho={}", bound) + (r.boundary.empty() ? "" : "," + r.boundary);
      if ((bound < 0.0 && f_cross >= 0.0) || (bound > 0.0 && f_cross <= 0.0)) return r;
    }
  }
  for (const auto& cand : boundary_candidates(spec)) {
    ParamVector s = start;
    if (cand.label.find("phi1") != std::string::npos) s.phi1 = 0.0;
    if (cand.label.find("phi2") != std::string::npos) s.phi2 = 0.0;
    FitResult r;
    try {
      r = solve_mm(data, w, cand.spec, s, opts);
    } catch (const NumericalError&) {
      continue;
    }
    if (!r.converged) continue;
    r.spec = spec;
    r.boundary = cand.label;
    // A boundary point is an acceptable solution when the model moments of the
    // dropped equations do not fall short of the data.
    CovCache cache(w);
    const auto sys = evaluate_moments(r.theta_hat, data, cache.at(r.theta_hat.rho), false);
    bool admissible = true;
    for (int eq : cand.dropped_equations)
      if (sys.f(eq) < 0.0) admissible = false;
    if (admissible) return r;
    if (!first_converged) first_converged = r;
  }
  if (first_converged) return *first_converged;
  if (!primary_error.empty()) throw NumericalError(primary_error);
  return primary;
}

}  // namespace

FitResult fit_mm(const PanelData& data, const ProximityMatrix& w, const ModelSpec& spec, const FitOptions& opts,
                 std::optional<ParamVector> seed) {
  check_spec_data(spec, data);
  if (w.size() != data.D) throw DataError("proximity matrix size does not match the panel");
  ParamVector start = seed ? *seed : seed_parameters(data, w);
  if (start.p() != data.p) throw DataError("seed parameter vector does not match p");

  const bool two_stage = opts.option == FitOption::opt2 && spec.uses_spatial();
  if (!two_stage) {
    FitResult r = solve_with_fallback(data, w, spec, start, opts);
    r.option = opts.option;
    r.seed_used = start;
    return r;
  }

  // Stage 1: rho = 0 fit, Moran's I of its predicted domain effects.
  const ModelSpec spec0 = rho_free_counterpart(spec);
  ParamVector start0 = start;
  start0.rho = 0.0;
  FitResult stage0 = solve_with_fallback(data, w, spec0, start0, opts);
  double rho_hat = 0.0;
  if (stage0.theta_hat.phi1 > 0.0) {
    const SarCovariance iid(w, 0.0);
    const auto eff = ebp_random_effects(stage0.theta_hat, data, iid, opts.moran_mc, EbpMode::approx);
    try {
      rho_hat = std::clamp(morans_i(std::span<const double>(eff.v1.data(), eff.v1.size()), w), -kRhoBound, kRhoBound);
    } catch (const NumericalError&) {
      rho_hat = 0.0;
    }
  }

  // Stage 2: remaining equations with rho fixed.
  ParamVector start1 = stage0.converged ? stage0.theta_hat : start;
  if (spec.has_param(spec.phi1_index()) && start1.phi1 == 0.0) start1.phi1 = start.phi1;
  if (spec.uses_phi2() && start1.phi2 == 0.0) start1.phi2 = start.phi2;
  start1.rho = rho_hat;
  FitResult r = solve_with_fallback(data, w, spec.with_fixed_rho(), start1, opts);
  r.spec = spec;
  r.option = opts.option;
  r.seed_used = start;
  r.moran_rho = rho_hat;
  if (!stage0.converged) r.message += fmt::format(" (rho = 0 stage: {})", stage0.message);
  return r;
}

}  // namespace spt
