// fmcure command-line tool: `fit` for datasets on disk, `simulate` for
// Monte Carlo studies. Exit codes: 0 success, 1 usage/config error,
// 2 numerical failure or non-convergence, 3 data integrity error.
#include <CLI11.hpp>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fmcure/dataset.hpp"
#include "fmcure/em.hpp"
#include "fmcure/selection.hpp"
#include "fmcure/simulate.hpp"

namespace {

using fmcure::ConfigError;

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Flat "key = value" file; '#' starts a comment; unknown keys are ignored
// (the same file carries the dataset schema keys).
std::map<std::string, std::string> read_flat_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line is not key=value: '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has invalid number '" +
                      value + "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has invalid integer '" +
                      value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "' must be true/false");
}

fmcure::Frailty parse_frailty(const std::string& v) {
  if (v == "constant") return fmcure::Frailty::constant;
  if (v == "ar1") return fmcure::Frailty::ar1;
  throw ConfigError("frailty must be 'constant' or 'ar1', got '" + v + "'");
}

fmcure::PenaltyKind parse_penalty(const std::string& v) {
  if (v == "none") return fmcure::PenaltyKind::none;
  if (v == "alasso") return fmcure::PenaltyKind::alasso;
  if (v == "scad") return fmcure::PenaltyKind::scad;
  throw ConfigError("penalty must be 'none', 'alasso' or 'scad', got '" + v +
                    "'");
}

fmcure::Variance parse_variance(const std::string& v) {
  if (v == "reml") return fmcure::Variance::reml;
  if (v == "ml") return fmcure::Variance::ml;
  throw ConfigError("variance must be 'reml' or 'ml', got '" + v + "'");
}

struct CommonArgs {
  std::string config;
  std::string frailty = "constant";
  std::string penalty = "scad";
  std::string variance = "reml";
  std::string out = ".";
  int grid_size = 25;
  double kappa1 = -1, kappa2 = -1;  // >= 0 means fixed
  bool verbose = false;
};

struct FitArgs : CommonArgs {
  std::string data;
};

struct SimArgs : CommonArgs {
  int m = 200;
  double theta = 0.5;
  double rho = 0.0;
  int censoring = 25;
  int replications = 100;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Fill any option the command line left untouched from the config file.
template <typename Assign>
void apply_key(const std::map<std::string, std::string>& kv, CLI::App* cmd,
               const std::string& flag, const std::string& key,
               Assign assign) {
  const CLI::Option* opt = cmd->get_option_no_throw(flag);
  if (opt != nullptr && opt->count() > 0) return;  // flags win
  const auto it = kv.find(key);
  if (it != kv.end()) assign(it->second);
}

void apply_common_config(const std::map<std::string, std::string>& kv,
                         CLI::App* cmd, CommonArgs& args) {
  apply_key(kv, cmd, "--frailty", "frailty",
            [&](const std::string& v) { args.frailty = v; });
  apply_key(kv, cmd, "--penalty", "penalty",
            [&](const std::string& v) { args.penalty = v; });
  apply_key(kv, cmd, "--variance", "variance",
            [&](const std::string& v) { args.variance = v; });
  apply_key(kv, cmd, "--out", "out",
            [&](const std::string& v) { args.out = v; });
  apply_key(kv, cmd, "--grid-size", "grid-size", [&](const std::string& v) {
    args.grid_size = static_cast<int>(parse_int("grid-size", v));
  });
  apply_key(kv, cmd, "--kappa1", "kappa1", [&](const std::string& v) {
    args.kappa1 = parse_double("kappa1", v);
  });
  apply_key(kv, cmd, "--kappa2", "kappa2", [&](const std::string& v) {
    args.kappa2 = parse_double("kappa2", v);
  });
  apply_key(kv, cmd, "--verbose", "verbose", [&](const std::string& v) {
    args.verbose = parse_bool("verbose", v);
  });
}

fmcure::SelectionOptions selection_options(const CommonArgs& args) {
  fmcure::SelectionOptions sopts;
  sopts.grid_size = args.grid_size;
  const bool k1 = args.kappa1 >= 0, k2 = args.kappa2 >= 0;
  if (k1 != k2)
    throw ConfigError("--kappa1 and --kappa2 must be given together");
  if (k1) {
    sopts.fixed_kappa = true;
    sopts.kappa1 = args.kappa1;
    sopts.kappa2 = args.kappa2;
  }
  return sopts;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// Two-sided normal p-value for z = estimate/ase.
std::string wald_p(double estimate, double ase) {
  if (!(ase > 0)) return "";
  const double z = std::abs(estimate / ase);
  return format_g(std::erfc(z / std::sqrt(2.0)));
}

std::ofstream open_artifact(const std::filesystem::path& dir,
                            const std::string& name,
                            const std::vector<std::string>& provenance) {
  std::ofstream out(dir / name);
  if (!out)
    throw fmcure::Error("cannot write " + name + " under " + dir.string());
  for (const std::string& line : provenance) out << "# " << line << "\n";
  return out;
}

int run_fit(const FitArgs& args) {
  if (args.data.empty()) throw ConfigError("--data is required for fit");
  if (args.config.empty())
    throw ConfigError(
        "--config with incidence_covariates/latency_covariates is required "
        "for fit");
  const fmcure::Frailty structure = parse_frailty(args.frailty);
  const fmcure::PenaltyKind kind = parse_penalty(args.penalty);

  fmcure::FitOptions fopts;
  fopts.variance = parse_variance(args.variance);
  fopts.verbose = args.verbose;
  const fmcure::SelectionOptions sopts = selection_options(args);

  const fmcure::Schema schema = fmcure::load_schema(args.config);
  const fmcure::RecurrentDataset data = fmcure::load_dataset(args.data, schema);

  std::vector<std::string> provenance = {
      "command=fit",
      "data=" + args.data,
      "config=" + args.config,
      "frailty=" + args.frailty,
      "penalty=" + args.penalty,
      "variance=" + args.variance,
      "grid_size=" + std::to_string(args.grid_size),
      "records=" + std::to_string(data.n()),
      "subjects=" + std::to_string(data.m()),
  };
  if (sopts.fixed_kappa) {
    provenance.push_back("kappa1=" + format_g(sopts.kappa1));
    provenance.push_back("kappa2=" + format_g(sopts.kappa2));
  }

  const std::filesystem::path out_dir(args.out);
  std::filesystem::create_directories(out_dir);

  fmcure::PenalizedFit fit;
  try {
    fit = fmcure::fit_penalized(data, structure, kind, fopts, sopts);
  } catch (const std::exception& e) {
    std::ofstream summary = open_artifact(out_dir, "summary.txt", provenance);
    summary << "status: error\nerror: " << e.what() << "\n";
    std::cerr << "fit failed: " << e.what() << "\n";
    throw;
  }

  const bool penalized = kind != fmcure::PenaltyKind::none;
  {
    std::ofstream coef = open_artifact(out_dir, "coefficients.csv", provenance);
    coef << "submodel,variable,estimate,ase,p_value,zeroed\n";
    auto row = [&](const std::string& submodel, const std::string& variable,
                   double est, double ase) {
      const bool zeroed = est == 0.0;
      coef << submodel << "," << variable << "," << format_g(est) << ","
           << format_g(ase) << ","
           << (penalized || zeroed ? std::string() : wald_p(est, ase)) << ","
           << (zeroed ? 1 : 0) << "\n";
    };
    const Eigen::VectorXd& a = fit.sel.alpha_hat;
    const Eigen::VectorXd& b = fit.sel.beta_hat;
    const Eigen::VectorXd& ase = fit.sel.ase;
    row("incidence", "intercept", a[0], ase[0]);
    for (int j = 0; j < data.d(); ++j)
      row("incidence", data.incidence_names[j], a[j + 1], ase[j + 1]);
    for (int j = 0; j < data.p(); ++j)
      row("latency", data.latency_names[j], b[j], ase[data.d() + 1 + j]);
    // Variance components carry no Wald test.
    coef << "variance,theta," << format_g(fit.base.params.theta) << ",,,0\n";
    if (structure == fmcure::Frailty::ar1)
      coef << "variance,rho," << format_g(fit.base.params.rho) << ",,,0\n";
  }
  {
    std::ofstream path = open_artifact(out_dir, "bic_path.csv", provenance);
    path << "kappa1,kappa2,bic,v\n";
    for (const fmcure::BicPathRow& r : fit.sel.bic_path)
      path << format_g(r.kappa1) << "," << format_g(r.kappa2) << ","
           << format_g(r.bic) << "," << r.v << "\n";
  }
  {
    std::vector<std::string> extra = provenance;
    extra.push_back("t_h=" + format_g(fit.base.baseline.t_h));
    extra.push_back("psi_hat=" + format_g(fit.base.baseline.psi_hat));
    std::ofstream base = open_artifact(out_dir, "baseline.csv", extra);
    base << "time,survival\n";
    for (size_t k = 0; k < fit.base.baseline.knots.size(); ++k)
      base << format_g(fit.base.baseline.knots[k]) << ","
           << format_g(fit.base.baseline.values[k]) << "\n";
  }
  {
    std::ofstream summary = open_artifact(out_dir, "summary.txt", provenance);
    summary << "status: " << (fit.base.converged ? "converged" : "not-converged")
            << "\n"
            << "em_iterations: " << fit.base.iterations << "\n"
            << "loglik: " << format_g(fit.base.loglik) << "\n"
            << "theta: " << format_g(fit.base.params.theta) << "\n";
    if (structure == fmcure::Frailty::ar1)
      summary << "rho: " << format_g(fit.base.params.rho) << "\n";
    if (penalized) {
      summary << "kappa1: " << format_g(fit.sel.kappa1) << "\n"
              << "kappa2: " << format_g(fit.sel.kappa2) << "\n"
              << "bic: " << format_g(fit.sel.bic) << "\n"
              << "nonzero_fixed_effects: " << fit.sel.v << "\n";
    }
    summary << "final_score_norm: " << format_g(fit.base.diag.final_score_norm)
            << "\n"
            << "final_ridge: " << format_g(fit.base.diag.final_ridge) << "\n"
            << "ascent_violations: " << fit.base.diag.ascent_violations
            << "\n";
  }

  if (!fit.base.converged) {
    std::cerr << "EM did not converge in " << fit.base.iterations
              << " iterations; trace:\n";
    for (const fmcure::EmIterRecord& r : fit.base.diag.trace)
      std::fprintf(stderr,
                   "  iter=%d loglik=%.8f theta=%.6f rho=%.4f max_delta=%.3e\n",
                   r.iter, r.loglik, r.theta, r.rho, r.max_delta);
    return 2;
  }
  std::cout << "fit converged in " << fit.base.iterations
            << " EM iterations; artifacts written to " << args.out << "\n";
  return 0;
}

int run_simulate(const SimArgs& args) {
  fmcure::SimConfig cfg = fmcure::SimConfig::defaults();
  cfg.m = args.m;
  cfg.theta_true = args.theta;
  cfg.rho_true = args.rho;
  cfg.structure = parse_frailty(args.frailty);
  cfg.set_censoring(args.censoring);
  cfg.replications = args.replications;
  cfg.seed = args.seed;

  fmcure::FitOptions fopts;
  fopts.variance = parse_variance(args.variance);
  const fmcure::SelectionOptions sopts = selection_options(args);
  const fmcure::PenaltyKind kind = parse_penalty(args.penalty);

  std::string method;
  if (kind == fmcure::PenaltyKind::none)
    method = "none";
  else
    method = std::string(kind == fmcure::PenaltyKind::scad ? "scad" : "alasso") +
             (fopts.variance == fmcure::Variance::ml ? "_ml" : "");
  const std::vector<std::string> methods = {"oracle", method};

  const std::vector<std::string> provenance = {
      "command=simulate",
      "m=" + std::to_string(args.m),
      "theta=" + format_g(args.theta),
      "rho=" + format_g(args.rho),
      "censoring=" + std::to_string(args.censoring),
      "frailty=" + args.frailty,
      "penalty=" + args.penalty,
      "variance=" + args.variance,
      "replications=" + std::to_string(args.replications),
      "seed=" + std::to_string(args.seed),
      "grid_size=" + std::to_string(args.grid_size),
      "threads=" + std::to_string(args.threads),
      "methods=oracle+" + method,
  };

  const fmcure::StudyReport report =
      fmcure::run_study(cfg, methods, args.threads, fopts, sopts);
  fmcure::write_study_reports(report, cfg, args.out, provenance);

  bool all_failed = false;
  for (size_t mi = 0; mi < report.method_names.size(); ++mi) {
    const fmcure::StudyMetrics& sm = report.metrics[mi];
    std::printf(
        "%-10s ok=%d failed=%d | incidence c=%.2f i=%.2f mse=%.3f | "
        "latency c=%.2f i=%.2f mse=%.3f | theta=%.3f\n",
        report.method_names[mi].c_str(), sm.n_ok, sm.n_failed,
        sm.incidence.correct, sm.incidence.incorrect, sm.incidence.mse,
        sm.latency.correct, sm.latency.incorrect, sm.latency.mse,
        sm.mean_theta);
    if (sm.n_ok == 0) all_failed = true;
  }
  std::cout << "reports written to " << args.out << "\n";
  return all_failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fmcure: joint variable selection for recurrent-event cure models with "
      "shared log-normal frailty (SCAD / adaptive-lasso penalties, "
      "REML or ML variance components)"};
  app.require_subcommand(1);

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand(
      "fit", "Fit a penalized (or unpenalized) model to a CSV dataset");
  fit->add_option("--data", fit_args.data,
                  "CSV with subject_id,event_index,gap_time,status + covariates");
  fit->add_option("--config", fit_args.config,
                  "key=value file: incidence_covariates, latency_covariates, "
                  "standardize, plus any flag mirrored by name (flags win)");
  fit->add_option("--frailty", fit_args.frailty, "constant|ar1")
      ->default_str("constant");
  fit->add_option("--penalty", fit_args.penalty, "none|alasso|scad")
      ->default_str("scad");
  fit->add_option("--variance", fit_args.variance, "reml|ml")
      ->default_str("reml");
  fit->add_option("--grid-size", fit_args.grid_size,
                  "points per tuning-parameter axis")
      ->default_val(25);
  fit->add_option("--kappa1", fit_args.kappa1,
                  "fixed incidence tuning parameter (skips the grid)");
  fit->add_option("--kappa2", fit_args.kappa2,
                  "fixed latency tuning parameter (skips the grid)");
  fit->add_option("--out", fit_args.out, "output directory")->default_str(".");
  fit->add_flag("--verbose", fit_args.verbose, "EM progress on stderr");

  SimArgs sim_args;
  CLI::App* sim = app.add_subcommand(
      "simulate",
      "Monte Carlo study: oracle benchmark plus the selected penalty.\n"
      "Example (full 100-replication study of one design cell):\n"
      "  fmcure simulate --m 200 --theta 0.5 --censoring 25 "
      "--replications 100 --penalty scad --seed 20260825 --out results/");
  sim->add_option("--m", sim_args.m, "subjects per replication")
      ->default_val(200);
  sim->add_option("--theta", sim_args.theta, "true frailty variance")
      ->default_val(0.5);
  sim->add_option("--rho", sim_args.rho, "true AR(1) correlation (ar1 only)")
      ->default_val(0.0);
  sim->add_option("--censoring", sim_args.censoring,
                  "censoring setting: 25 or 40")
      ->default_val(25);
  sim->add_option("--frailty", sim_args.frailty, "constant|ar1")
      ->default_str("constant");
  sim->add_option("--penalty", sim_args.penalty, "none|alasso|scad")
      ->default_str("scad");
  sim->add_option("--variance", sim_args.variance, "reml|ml")
      ->default_str("reml");
  sim->add_option("--replications", sim_args.replications, "replication count")
      ->default_val(100);
  CLI::Option* seed_opt =
      sim->add_option("--seed", sim_args.seed, "RNG seed (required)");
  seed_opt->required();
  sim->add_option("--threads", sim_args.threads, "worker threads")
      ->default_val(1);
  sim->add_option("--grid-size", sim_args.grid_size,
                  "points per tuning-parameter axis")
      ->default_val(25);
  sim->add_option("--kappa1", sim_args.kappa1, "fixed incidence tuning value");
  sim->add_option("--kappa2", sim_args.kappa2, "fixed latency tuning value");
  sim->add_option("--config", sim_args.config,
                  "key=value file mirroring flags (flags win)");
  sim->add_option("--out", sim_args.out, "output directory")->default_str(".");
  sim->add_flag("--verbose", sim_args.verbose, "EM progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage problems map to exit 1
  }

  try {
    if (fit->parsed()) {
      if (!fit_args.config.empty()) {
        const auto kv = read_flat_config(fit_args.config);
        apply_common_config(kv, fit, fit_args);
        apply_key(kv, fit, "--data", "data",
                  [&](const std::string& v) { fit_args.data = v; });
      }
      return run_fit(fit_args);
    }
    if (!sim_args.config.empty()) {
      const auto kv = read_flat_config(sim_args.config);
      apply_common_config(kv, sim, sim_args);
      apply_key(kv, sim, "--m", "m", [&](const std::string& v) {
        sim_args.m = static_cast<int>(parse_int("m", v));
      });
      apply_key(kv, sim, "--theta", "theta", [&](const std::string& v) {
        sim_args.theta = parse_double("theta", v);
      });
      apply_key(kv, sim, "--rho", "rho", [&](const std::string& v) {
        sim_args.rho = parse_double("rho", v);
      });
      apply_key(kv, sim, "--censoring", "censoring", [&](const std::string& v) {
        sim_args.censoring = static_cast<int>(parse_int("censoring", v));
      });
      apply_key(kv, sim, "--replications", "replications",
                [&](const std::string& v) {
                  sim_args.replications =
                      static_cast<int>(parse_int("replications", v));
                });
      apply_key(kv, sim, "--threads", "threads", [&](const std::string& v) {
        sim_args.threads = static_cast<int>(parse_int("threads", v));
      });
    }
    return run_simulate(sim_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const fmcure::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const fmcure::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
