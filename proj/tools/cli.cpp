#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <thread>

#include "sptsae/bootstrap.hpp"
#include "sptsae/errors.hpp"
#include "sptsae/fit.hpp"
#include "sptsae/panel_io.hpp"
#include "sptsae/parallel.hpp"
#include "sptsae/predict.hpp"
#include "sptsae/simstudy.hpp"
#include "sptsae/spatial.hpp"

namespace spt::cli {

namespace {

using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProximityArgs {
  std::string path;
  std::string type = "adjacency";
  int k = 4;
};

struct Common {
  std::optional<unsigned> threads;
};

unsigned resolve_threads(const Common& c) {
  if (std::getenv("SPT_SAE_THREADS") || !c.threads) return default_threads();
  return std::max(1u, *c.threads);
}

void add_proximity_options(CLI::App* cmd, ProximityArgs& a, bool required) {
  auto* opt = cmd->add_option("--proximity", a.path, "adjacency list (id1,id2 per line) or square matrix CSV")
                  ->check(CLI::ExistingFile);
  if (required) opt->required();
  cmd->add_option("--proximity-type", a.type, "adjacency, distance, knn or matrix")
      ->check(CLI::IsMember({"adjacency", "distance", "knn", "matrix"}));
  cmd->add_option("--k", a.k, "neighbours for knn proximities")->check(CLI::PositiveNumber);
}

ProximityMatrix build_proximity(const ProximityArgs& a, const std::vector<std::string>& labels) {
  try {
    if (a.type == "adjacency") return build_adjacency_proximity(read_adjacency_file(a.path), labels);
    auto [m, ids] = read_matrix_csv(a.path);
    ProximityMatrix w = a.type == "distance" ? build_distance_proximity(m, ids)
                        : a.type == "knn"    ? build_knn_proximity(m, a.k, ids)
                                             : ProximityMatrix::from_raw(m, ids);
    return labels.empty() ? w : w.aligned_to(labels);
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.rfind(a.path, 0) == 0) throw;
    throw DataError(fmt::format("{}: {}", a.path, msg));
  }
}

// Labels of an adjacency list in order of first appearance.
std::vector<std::string> edge_labels(const std::vector<std::pair<std::string, std::string>>& edges) {
  std::vector<std::string> out;
  for (const auto& [a, b] : edges)
    for (const auto& l : {a, b})
      if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  return out;
}

json param_json(const ParamVector& t, const std::vector<std::string>& names) {
  json row;
  row["beta"] = std::vector<double>(t.beta.data(), t.beta.data() + t.beta.size());
  row["covariates"] = names;
  row["phi1"] = t.phi1;
  row["phi2"] = t.phi2;
  row["rho"] = t.rho;
  return row;
}

ParamVector param_from_json(const json& j) {
  ParamVector t;
  const auto beta = j.at("beta").get<std::vector<double>>();
  t.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  t.phi1 = j.at("phi1").get<double>();
  t.phi2 = j.at("phi2").get<double>();
  t.rho = j.at("rho").get<double>();
  return t;
}

std::vector<std::string> param_names(const ModelSpec& spec, const std::vector<std::string>& covs) {
  std::vector<std::string> out;
  for (int idx : spec.params) {
    if (idx < spec.p) out.push_back("beta:" + covs[idx]);
    else if (idx == spec.phi1_index()) out.push_back("phi1");
    else if (idx == spec.phi2_index()) out.push_back("phi2");
    else out.push_back("rho");
  }
  return out;
}

json fit_json(const FitResult& f, const PanelData& data) {
  json j;
  j["model"] = variant_name(f.spec.variant);
  j["option"] = option_name(f.option);
  j["D"] = data.D;
  j["T"] = data.T;
  j["theta_hat"] = param_json(f.theta_hat, data.covariate_names);
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["residual_norm"] = f.residual_norm;
  j["boundary"] = f.boundary;
  j["estimated"] = param_names(f.solved_spec, data.covariate_names);
  j["moran_rho"] = f.moran_rho ? json(*f.moran_rho) : json(nullptr);
  j["seed_parameters"] = param_json(f.seed_used, data.covariate_names);
  j["message"] = f.message;
  json trace = json::array();
  for (std::size_t i = 0; i < f.trace.size(); ++i) {
    const auto& e = f.trace[i];
    json row;
    row["iteration"] = i;
    row["theta"] = std::vector<double>(e.theta.data(), e.theta.data() + e.theta.size());
    row["residual_norm"] = e.residual_norm;
    row["merit"] = e.merit;
    row["step_norm"] = e.step_norm;
    row["halvings"] = e.halvings;
    trace.push_back(std::move(row));
  }
  j["trace"] = std::move(trace);
  return j;
}

struct LoadedFit {
  ParamVector theta;
  ModelSpec spec;
  FitOption option = FitOption::opt2;
  bool converged = false;
};

LoadedFit load_fit(const std::string& path, const PanelData& data) {
  json j;
  try {
    j = json::parse(read_text_file(path));
    LoadedFit f;
    f.theta = param_from_json(j.at("theta_hat"));
    f.spec = ModelSpec::make(parse_variant(j.at("model").get<std::string>()), f.theta.p());
    f.option = parse_option(j.value("option", std::string("opt2")));
    f.converged = j.at("converged").get<bool>();
    if (f.theta.p() != data.p)
      throw DataError(fmt::format("{}: fit has {} coefficients, data has {} covariates", path, f.theta.p(), data.p));
    return f;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: not a valid fit file ({})", path, e.what()));
  }
}

std::string format_prediction(const PanelData& data, const Eigen::MatrixXd& p_hat, const Eigen::MatrixXd* mse,
                              const Eigen::MatrixXd* rrmse) {
  std::string out = mse ? "domain,time,p_hat,mu_hat,mse,rrmse\n" : "domain,time,p_hat,mu_hat\n";
  for (int d = 0; d < data.D; ++d)
    for (int t = 0; t < data.T; ++t) {
      out += fmt::format("{},{},{:.17g},{:.17g}", data.domain_labels[d], data.time_labels[t], p_hat(d, t),
                         data.nu(d, t) * p_hat(d, t));
      if (mse) out += fmt::format(",{:.17g},{:.17g}", (*mse)(d, t), (*rrmse)(d, t));
      out += "\n";
    }
  return out;
}

FitOptions fit_options(const std::string& option, double tol, int max_iter, std::uint64_t seed, unsigned threads) {
  FitOptions fo;
  fo.option = parse_option(option);
  fo.tol = tol;
  fo.max_iter = max_iter;
  fo.moran_mc.seed = stream_seed(seed, 0x6d6f72616eULL);
  fo.moran_mc.threads = threads;
  if (!(tol > 0.0)) throw UsageError("--tol must be positive");
  if (max_iter < 1) throw UsageError("--max-iter must be >= 1");
  return fo;
}

std::vector<FitOption> parse_option_list(const std::string& s) {
  std::vector<FitOption> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_option(item));
  if (out.empty()) throw UsageError("--options needs at least one of opt1, opt2");
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatio-temporal Poisson small area models: fitting, prediction, bootstrap and simulation",
               "spt-sae"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "worker threads (SPT_SAE_THREADS overrides)")
      ->check(CLI::PositiveNumber);

  // Shared option storage; only the chosen subcommand fills it.
  std::string data_path, fit_path, out_path, model = "st1", option = "opt2", predictor = "ebp-approx", null_name;
  std::string study = "sim1", options = "opt1,opt2", refit = "opt2";
  ProximityArgs prox;
  std::uint64_t seed = 0;
  double tol = 1e-8;
  int max_iter = 100, s1 = 500, s2 = 700, b = 0;
  SimScenario scen;

  auto seed_opt = [&](CLI::App* c) { c->add_option("--seed", seed, "master seed")->required(); };
  auto data_opt = [&](CLI::App* c) {
    c->add_option("--data", data_path, "panel CSV: domain,time,y,size,x1,...,xp")
        ->required()
        ->check(CLI::ExistingFile);
  };
  auto out_opt = [&](CLI::App* c) { c->add_option("--out", out_path, "output file")->required(); };
  auto fit_opts = [&](CLI::App* c) {
    c->add_option("--tol", tol, "convergence tolerance on the scaled residual max-norm");
    c->add_option("--max-iter", max_iter, "Newton-Raphson iteration cap");
  };
  auto mc_opts = [&](CLI::App* c) {
    c->add_option("--s1", s1, "domain effect draws")->check(CLI::PositiveNumber);
    c->add_option("--s2", s2, "domain-time effect draws")->check(CLI::PositiveNumber);
  };

  auto* fit = app.add_subcommand("fit", "fit a model by the method of moments");
  data_opt(fit);
  add_proximity_options(fit, prox, true);
  fit->add_option("--model", model, "st1, st1_1, t1, t1_2, s1, m1 or m0")
      ->check(CLI::IsMember({"st1", "st1_1", "t1", "t1_2", "s1", "m1", "m0"}));
  fit->add_option("--option", option, "opt1 or opt2")->check(CLI::IsMember({"opt1", "opt2"}));
  fit_opts(fit);
  seed_opt(fit);
  out_opt(fit);

  auto* pred = app.add_subcommand("predict", "predict cell proportions from a fit");
  auto* mse = app.add_subcommand("mse", "predict and estimate MSEs by parametric bootstrap");
  for (auto* c : {pred, mse}) {
    c->add_option("--fit", fit_path, "fit JSON from `fit`")->required()->check(CLI::ExistingFile);
    data_opt(c);
    add_proximity_options(c, prox, true);
    c->add_option("--predictor", predictor, "ebp-approx, ebp-exact, plugin or synthetic")
        ->check(CLI::IsMember({"ebp-approx", "ebp-exact", "plugin", "synthetic"}));
    mc_opts(c);
    seed_opt(c);
    out_opt(c);
  }
  mse->add_option("--b", b, "bootstrap replicates (default 500)")->check(CLI::PositiveNumber);
  mse->add_option("--refit-option", refit, "fitting option inside replicates")
      ->check(CLI::IsMember({"opt1", "opt2"}));
  fit_opts(mse);

  auto* test = app.add_subcommand("test", "parametric bootstrap test of phi1 = 0, rho = 0 or phi2 = 0");
  data_opt(test);
  add_proximity_options(test, prox, true);
  test->add_option("--null", null_name, "phi1, rho or phi2")->required()->check(CLI::IsMember({"phi1", "rho", "phi2"}));
  test->add_option("--b", b, "bootstrap replicates (default 99)")->check(CLI::PositiveNumber);
  test->add_option("--option", option, "fitting option")->check(CLI::IsMember({"opt1", "opt2"}));
  fit_opts(test);
  seed_opt(test);
  out_opt(test);

  auto* sim = app.add_subcommand("simulate", "run a simulation study on the seven-diagonal design");
  sim->add_option("--study", study, "sim1 (fitting) or sim2 (prediction)")->check(CLI::IsMember({"sim1", "sim2"}));
  sim->add_option("--d", scen.D, "domains")->check(CLI::Range(7, 100000));
  sim->add_option("--t", scen.T, "periods")->check(CLI::PositiveNumber);
  sim->add_option("--rho", scen.rho, "true rho")->check(CLI::Range(-0.99, 0.99));
  sim->add_option("--k", scen.k, "replicates")->check(CLI::PositiveNumber);
  sim->add_option("--phi1", scen.phi1, "true phi1");
  sim->add_option("--phi2", scen.phi2, "true phi2");
  sim->add_option("--beta0", scen.beta0, "true intercept");
  sim->add_option("--beta1", scen.beta1, "true slope");
  sim->add_option("--nu", scen.nu, "cell size")->check(CLI::Range(1.0, 1e12));
  sim->add_option("--options", options, "sim1 fitting options, comma separated");
  sim->add_option("--s1", scen.s1, "sim2 domain effect draws")->check(CLI::PositiveNumber);
  sim->add_option("--s2", scen.s2, "sim2 domain-time effect draws")->check(CLI::PositiveNumber);
  fit_opts(sim);
  seed_opt(sim);
  out_opt(sim);

  auto* prx = app.add_subcommand("proximity", "build a row-standardized proximity matrix and write it as CSV");
  prx->add_option("--input", prox.path, "adjacency list or square matrix CSV")->check(CLI::ExistingFile);
  prx->add_option("--type", prox.type, "adjacency, distance, knn, matrix or seven-diagonal")
      ->check(CLI::IsMember({"adjacency", "distance", "knn", "matrix", "seven-diagonal"}));
  prx->add_option("--k", prox.k, "neighbours for knn")->check(CLI::PositiveNumber);
  int diag_d = 0;
  prx->add_option("--d", diag_d, "domains of the seven-diagonal matrix")->check(CLI::Range(7, 100000));
  prx->add_option("--data", data_path, "panel CSV whose domain order the matrix follows")->check(CLI::ExistingFile);
  out_opt(prx);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "spt-sae: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const unsigned threads = resolve_threads(common);
    if (fit->parsed()) {
      const PanelData data = read_panel_csv(data_path);
      const ProximityMatrix w = build_proximity(prox, data.domain_labels);
      const ModelSpec spec = ModelSpec::make(parse_variant(model), data.p);
      const FitResult r = fit_mm(data, w, spec, fit_options(option, tol, max_iter, seed, threads));
      write_text_file(out_path, fit_json(r, data).dump(2) + "\n");
      out << fmt::format("{} {}: converged={} iterations={} residual={:.3g}\n", variant_name(spec.variant),
                         option_name(r.option), r.converged, r.iterations, r.residual_norm);
      if (!r.converged) {
        err << "spt-sae: fit did not converge: " << r.message << "\n";
        return kExitNumerical;
      }
    } else if (pred->parsed() || mse->parsed()) {
      const PanelData data = read_panel_csv(data_path);
      const ProximityMatrix w = build_proximity(prox, data.domain_labels);
      const LoadedFit f = load_fit(fit_path, data);
      const McConfig cfg{s1, s2, seed, threads};
      const PredictorKind kind = parse_predictor(predictor);
      if (pred->parsed()) {
        const SarCovariance cov(w, f.theta.rho);
        const auto ps = predict(kind, f.theta, data, cov, cfg);
        write_text_file(out_path, format_prediction(data, ps.p_hat, nullptr, nullptr));
      } else {
        if (!f.converged) throw NumericalError(fmt::format("{}: fit did not converge", fit_path));
        FitResult fr;
        fr.theta_hat = f.theta;
        fr.spec = f.spec;
        fr.solved_spec = f.spec;
        fr.option = f.option;
        fr.converged = true;
        BootstrapOptions bo;
        bo.b = b > 0 ? b : 500;
        bo.seed = stream_seed(seed, 0x626f6f74ULL);
        bo.threads = threads;
        bo.fit = fit_options(refit, tol, max_iter, seed, 1);
        const MseEstimate m = bootstrap_mse(fr, data, w, kind, cfg, bo);
        write_text_file(out_path, format_prediction(data, m.p_hat, &m.mse, &m.rrmse));
        out << fmt::format("mse: {} replicates, {} failures\n", m.b, m.failures);
      }
    } else if (test->parsed()) {
      const PanelData data = read_panel_csv(data_path);
      const ProximityMatrix w = build_proximity(prox, data.domain_labels);
      BootstrapOptions bo;
      bo.b = b > 0 ? b : 99;
      bo.seed = seed;
      bo.threads = threads;
      bo.fit = fit_options(option, tol, max_iter, seed, 1);
      const auto r = bootstrap_test(parse_test(null_name), data, w, bo);
      json j;
      j["null"] = test_name(r.kind);
      j["null_model"] = variant_name(r.null_model.variant);
      j["alternative_model"] = variant_name(r.alt_model.variant);
      j["option"] = option;
      j["statistic"] = r.statistic_observed;
      j["p_value"] = r.p_value;
      j["b"] = r.b;
      j["failures"] = r.failures;
      j["exceedances"] = r.exceedances;
      j["alternative_fit"] = param_json(r.alt_fit.theta_hat, data.covariate_names);
      j["null_fit"] = param_json(r.null_fit.theta_hat, data.covariate_names);
      j["bootstrap_statistics"] = r.statistics_boot;
      write_text_file(out_path, j.dump(2) + "\n");
      out << fmt::format("{}: statistic={:.6g} p={:.4g}\n", test_name(r.kind), r.statistic_observed, r.p_value);
    } else if (sim->parsed()) {
      scen.seed = seed;
      scen.threads = threads;
      const FitOptions base = fit_options("opt2", tol, max_iter, seed, 1);
      const SimTable t = study == "sim1" ? run_sim1(scen, parse_option_list(options), base, &err)
                                         : run_sim2(scen, base, &err);
      write_text_file(out_path, sim_table_csv(t));
    } else if (prx->parsed()) {
      std::optional<ProximityMatrix> w;
      std::vector<std::string> labels;
      if (!data_path.empty()) labels = read_panel_csv(data_path).domain_labels;
      if (prox.type == "seven-diagonal") {
        if (diag_d < 7) throw UsageError("--type seven-diagonal needs --d >= 7");
        w = build_seven_diagonal(diag_d);
      } else {
        if (prox.path.empty()) throw UsageError(fmt::format("--type {} needs --input", prox.type));
        if (prox.type == "adjacency" && labels.empty()) labels = edge_labels(read_adjacency_file(prox.path));
        w = build_proximity(prox, labels);
      }
      write_text_file(out_path, proximity_csv(*w));
      const Eigen::VectorXd nb = (w->w0().array() > 0.0).cast<double>().rowwise().sum();
      out << fmt::format("D={} neighbours min={} max={} mean={:.3f} symmetric={}\n", w->size(), nb.minCoeff(),
                         nb.maxCoeff(), nb.mean(), w->w0().isApprox(w->w0().transpose()));
    }
  } catch (const UsageError& e) {
    err << "spt-sae: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "spt-sae: data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "spt-sae: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "spt-sae: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace spt::cli
