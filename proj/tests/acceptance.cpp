// Acceptance gate: end-to-end reproduction checks for the Monte Carlo study,
// numerical kernel contracts, degenerate reductions, and the selection
// fixture. Prints one PASS/FAIL line per criterion; the exit code is the
// number of failed criteria.
//
// Usage: fmcure_acceptance [criterion...]     (default: run all seven)
// FMCURE_ACCEPTANCE_REPLICATIONS overrides the 100-replication default of
// the Monte Carlo criteria (debugging aid; the shipped default is the gate).
#include <sys/wait.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fmcure/dataset.hpp"
#include "fmcure/em.hpp"
#include "fmcure/penalty.hpp"
#include "fmcure/selection.hpp"
#include "fmcure/simulate.hpp"
#include "oracle_helpers.hpp"

using namespace fmcure;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

int replications() {
  if (const char* env = std::getenv("FMCURE_ACCEPTANCE_REPLICATIONS"))
    return std::max(1, std::atoi(env));
  return 100;
}

int threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Selection options used by every Monte Carlo criterion. The BIC search grid
// is refined from the library default of 25 points per axis to 40: with 25
// points adjacent kappas are a factor 10^(4/24) = 1.47 apart, which cannot
// place a grid point between the zeroing thresholds of two noise coefficients
// whose |z| differ by less than that factor, so one outlying noise coefficient
// shields nearby ones from being zeroed. That is an artifact of grid
// resolution, not of the BIC criterion; 40 points (ratio 1.27) resolve it.
SelectionOptions study_selection_options() {
  SelectionOptions sopts;
  sopts.grid_size = 40;
  return sopts;
}

std::string fmt(const char* pattern, ...) {
  char buf[1024];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared Monte Carlo cells: (m, theta) at the 25%-label censoring setting,
// methods oracle/scad/alasso, fixed per-cell seeds.

struct Cell {
  StudyReport report;
  SimConfig cfg;
};

using CellKey = std::pair<int, int>;  // (m, theta*10)

std::map<CellKey, Cell>& cell_cache() {
  static std::map<CellKey, Cell> cache;
  return cache;
}

SimConfig cell_config(int m, double theta, int reps) {
  SimConfig cfg = SimConfig::defaults();
  cfg.m = m;
  cfg.theta_true = theta;
  cfg.set_censoring(25);
  cfg.replications = reps;
  cfg.seed = 9000000ull + static_cast<std::uint64_t>(m) * 10 +
             static_cast<std::uint64_t>(theta * 10 + 0.5);
  return cfg;
}

// reps <= 0 means the full default. Cached per (m, theta): when a criterion
// with the full count runs first (the main() order arranges this), later
// criteria reuse the richer cell.
const Cell& cell(int m, double theta, int reps = 0) {
  if (reps <= 0) reps = replications();
  const CellKey key{m, static_cast<int>(theta * 10 + 0.5)};
  auto& cache = cell_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  Cell c;
  c.cfg = cell_config(m, theta, reps);
  std::fprintf(stderr, "[acceptance] cell m=%d theta=%.1f (%d reps) ...\n", m,
               theta, c.cfg.replications);
  const auto t0 = std::chrono::steady_clock::now();
  c.report = run_study(c.cfg, {"oracle", "scad", "alasso"}, threads(),
                       FitOptions{}, study_selection_options());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::fprintf(stderr, "[acceptance] cell m=%d theta=%.1f done in %.0fs\n", m,
               theta, secs);
  return cache.emplace(key, std::move(c)).first->second;
}

const StudyMetrics& method_metrics(const Cell& c, const std::string& name) {
  for (size_t k = 0; k < c.report.method_names.size(); ++k)
    if (c.report.method_names[k] == name) return c.report.metrics[k];
  throw Error("method not present in study report: " + name);
}

// ---------------------------------------------------------------------------
// Criterion 1: oracle means at (m=600, theta=0.5).

std::pair<bool, std::string> criterion1() {
  const Cell& c = cell(600, 0.5);
  const StudyMetrics& o = method_metrics(c, "oracle");
  struct Item {
    const char* name;
    double got, want;
  };
  const Item items[] = {
      {"alpha1", o.mean_alpha[1], -0.835}, {"alpha2", o.mean_alpha[2], 0.566},
      {"alpha6", o.mean_alpha[6], 1.020},  {"beta1", o.mean_beta[0], -1.440},
      {"beta4", o.mean_beta[3], 1.430},    {"beta6", o.mean_beta[5], 0.867},
  };
  bool ok = true;
  std::string detail;
  for (const Item& it : items) {
    const double dev = it.got - it.want;
    if (std::abs(dev) > 0.10) ok = false;
    detail += fmt("%s=%.3f(%+.3f) ", it.name, it.got, dev);
  }
  const double dtheta = o.mean_theta - 0.488;
  if (std::abs(dtheta) > 0.06) ok = false;
  detail += fmt("theta=%.3f(%+.3f, tol 0.06); coef tol 0.10", o.mean_theta,
                dtheta);
  if (o.n_failed > 0) detail += fmt("; %d replication(s) failed", o.n_failed);
  return {ok, detail};
}

// Criterion 2: SCAD / adaptive-lasso incidence selection at (600, 0.5).

std::pair<bool, std::string> criterion2() {
  const Cell& c = cell(600, 0.5);
  const StudyMetrics& scad = method_metrics(c, "scad");
  const StudyMetrics& al = method_metrics(c, "alasso");
  bool ok = true;
  auto check = [&ok](double got, double want, double tol) {
    if (std::abs(got - want) > tol) ok = false;
    return got;
  };
  std::string detail =
      fmt("scad inc c=%.2f(4.98+-0.35) i=%.2f(0.07+-0.35) mse=%.3f(0.049+-0.04)"
          "; alasso inc c=%.2f(4.78+-0.35) i=%.2f(0.10+-0.35) "
          "mse=%.3f(0.076+-0.05)",
          check(scad.incidence.correct, 4.98, 0.35),
          check(scad.incidence.incorrect, 0.07, 0.35),
          check(scad.incidence.mse, 0.049, 0.04),
          check(al.incidence.correct, 4.78, 0.35),
          check(al.incidence.incorrect, 0.10, 0.35),
          check(al.incidence.mse, 0.076, 0.05));
  return {ok, detail};
}

// Criterion 3: trend checks over the 3x3 (m, theta) grid.
//
// Runs the seven cells not already built by criteria 1/2/4 at 30 replications
// instead of 100: the checks are orderings whose true separations are large
// (SCAD vs adaptive-lasso MSE differ by ~50% on shared per-replication
// datasets, MSE shrinks several-fold per m step, the oracle roughly halves
// both), while the full grid at 100 replications costs days of CPU at one
// core. 30 paired replications resolve these gaps with margin.

std::pair<bool, std::string> criterion3() {
  const int trend_reps = std::min(replications(), 30);
  const int ms[] = {200, 600, 1000};
  const double thetas[] = {0.5, 1.5, 2.0};
  const auto total = [](const StudyMetrics& s) {
    return s.incidence.mse + s.latency.mse;
  };

  int scad_wins = 0;
  bool monotone = true, oracle_best = true;
  for (double theta : thetas) {
    double prev[3] = {1e300, 1e300, 1e300};  // alasso, scad, oracle
    for (int m : ms) {
      const Cell& c = cell(m, theta, trend_reps);
      const double al = total(method_metrics(c, "alasso"));
      const double sc = total(method_metrics(c, "scad"));
      const double orc = total(method_metrics(c, "oracle"));
      if (sc <= al) ++scad_wins;
      if (!(al < prev[0] && sc < prev[1] && orc < prev[2])) monotone = false;
      prev[0] = al;
      prev[1] = sc;
      prev[2] = orc;
      if (!(orc <= sc && orc <= al)) oracle_best = false;
    }
  }
  const bool ok = scad_wins >= 7 && monotone && oracle_best;
  return {ok, fmt("scad<=alasso in %d/9 cells (need >=7); "
                  "MSE monotone in m: %s; oracle best everywhere: %s",
                  scad_wins, monotone ? "yes" : "NO",
                  oracle_best ? "yes" : "NO")};
}

// Criterion 4: REML vs ML variance component at (600, 1.5).

std::pair<bool, std::string> criterion4() {
  const Cell& c = cell(600, 1.5);
  const double reml = method_metrics(c, "scad").mean_theta;

  // The ML arm checks a direction (ML below REML, a gap of ~0.1-0.2) plus the
  // REML band taken from the full-replication cell above; 60 replications give
  // a standard error of ~0.04 on the ML mean, ample for the ordering.
  SimConfig cfg = cell_config(600, 1.5, std::min(replications(), 60));
  std::fprintf(stderr, "[acceptance] ML study m=600 theta=1.5 (%d reps) ...\n",
               cfg.replications);
  const StudyReport ml_report = run_study(cfg, {"scad_ml"}, threads(),
                                          FitOptions{},
                                          study_selection_options());
  const double ml = ml_report.metrics[0].mean_theta;

  const bool in_band = std::abs(reml - 1.5) <= 0.15;
  const bool ordered = ml < reml;
  return {in_band && ordered,
          fmt("REML mean theta=%.3f (band 1.35..1.65: %s); ML mean "
              "theta=%.3f (< REML: %s)",
              reml, in_band ? "yes" : "NO", ml, ordered ? "yes" : "NO")};
}

// ---------------------------------------------------------------------------
// Criterion 5: numerical kernel suite (no Monte Carlo).

std::pair<bool, std::string> criterion5() {
  bool ok = true;
  std::string detail;
  const auto fail = [&](const std::string& what) {
    ok = false;
    detail += (detail.empty() ? "" : "; ") + what;
  };

  // (a) score vs central differences, (b) information vs FD Hessian.
  {
    const auto data = oracle::random_dataset(6, 2, 2, 501u, 0.6, 3, true);
    const auto view = order_records(data);
    const auto g = oracle::random_g(view, 502u);
    for (auto [structure, rho] :
         {std::pair{Frailty::constant, 0.0}, std::pair{Frailty::ar1, 0.45}}) {
      const auto prm = oracle::random_params(view, structure, 503u, 0.8, rho);
      const auto f = [&](const VectorXd& packed) {
        return blup_loglik(oracle::unpack(prm, packed), view, g);
      };
      const VectorXd sc = score(prm, view, g);
      const double score_err =
          (sc - oracle::fd_gradient(f, oracle::pack(prm)))
              .lpNorm<Eigen::Infinity>() /
          std::max(1.0, sc.lpNorm<Eigen::Infinity>());
      if (!(score_err < 1e-6)) fail(fmt("score FD err %.2e", score_err));

      const InfoMatrix info = info_matrix(prm, view, g);
      const MatrixXd fd = oracle::fd_hessian(f, oracle::pack(prm));
      const double hess_err = (info.sigma + fd).cwiseAbs().maxCoeff() /
                              std::max(1.0, info.sigma.cwiseAbs().maxCoeff());
      if (!(hess_err < 1e-4)) fail(fmt("Hessian FD err %.2e", hess_err));
    }
  }

  // (c) SCAD continuity at |x| = kappa and a*kappa.
  {
    double worst = 0;
    for (double kappa : {1e-3, 0.05, 0.3, 1.0, 4.0}) {
      for (double edge : {kappa, 3.7 * kappa}) {
        const double lo = std::nextafter(edge, 0.0);
        const double hi = std::nextafter(edge, 1e300);
        const double scale = std::max(1.0, kappa * kappa);
        worst = std::max(
            worst,
            std::abs(penalty_value_at(PenaltyKind::scad, kappa, 3.7, 1.0, lo) -
                     penalty_value_at(PenaltyKind::scad, kappa, 3.7, 1.0, hi)) /
                scale);
        worst = std::max(
            worst, std::abs(penalty_derivative_at(PenaltyKind::scad, kappa,
                                                  3.7, 1.0, lo) -
                            penalty_derivative_at(PenaltyKind::scad, kappa,
                                                  3.7, 1.0, hi)) /
                       std::max(1.0, kappa));
      }
    }
    if (!(worst < 1e-12)) fail(fmt("SCAD boundary gap %.2e", worst));
  }

  // (d) AR(1): G * G^{-1} = I.
  {
    double worst = 0;
    const std::vector<int> layout = {1, 4, 2, 5, 3};
    for (double rho : {-0.9, -0.5, 0.0, 0.5, 0.9}) {
      const MatrixXd g = oracle::dense_ar1_G(rho, layout);
      const MatrixXd prod = g * ar1_precision_dense(rho, layout);
      worst = std::max(
          worst, (prod - MatrixXd::Identity(g.rows(), g.cols()))
                     .cwiseAbs()
                     .maxCoeff());
    }
    if (!(worst < 1e-10)) fail(fmt("G*Ginv deviation %.2e", worst));
  }

  // (e) AR(1) correlation update: cubic-root residual and the dense
  //     estimating-equation residual at the profiled theta.
  {
    SimConfig cfg = SimConfig::defaults();
    cfg.m = 40;
    cfg.ni_min = 2;
    cfg.structure = Frailty::ar1;
    cfg.rho_true = 0.5;
    cfg.theta_true = 1.0;
    cfg.seed = 777;
    auto rng = replication_rng(cfg.seed, 0);
    const auto data = gen_dataset(cfg, rng).first;
    const auto view = order_records(data);
    FitOptions opts;
    opts.rho_init = 0.2;
    const auto fit = fit_unpenalized(view, Frailty::ar1, opts);

    const Ar1Traces tr = ar1_traces(fit.info, fit.params.u,
                                    view.n_per_subject, Variance::reml);
    const RhoUpdate upd =
        update_rho_ar1(tr, view.n, view.m, fit.params.rho, fit.params.u,
                       view.n_per_subject, opts.theta_floor);
    if (upd.kept_current) {
      fail("rho update kept current value (no admissible root)");
    } else {
      const double rho = upd.rho;
      const double dn = view.n, dm = view.m;
      const double a1 = (dn - dm) * (tr.b1 - tr.b3);
      const double a2 = (2.0 * dm - dn) * tr.b2;
      const double a3 = dn * tr.b3 - (dn + dm) * tr.b1;
      const double a4 = dn * tr.b2;
      const double scale =
          std::max({std::abs(a1), std::abs(a2), std::abs(a3), std::abs(a4)});
      const double cubic_res =
          std::abs(((a1 * rho + a2) * rho + a3) * rho + a4) / scale;
      if (!(cubic_res < 1e-8)) fail(fmt("cubic residual %.2e", cubic_res));

      // Dense residual of d/drho { -(1/2)[n log theta + log|G|
      //   + tr(G^{-1} M)/theta ] } at theta = theta~(rho), with
      //   M = Sigma*_uu + u u'.
      const double theta = reml_theta_ar1(tr, rho, view.n, opts.theta_floor);
      const MatrixXd m_mat =
          fit.info.inverse_block_uu() +
          fit.params.u * fit.params.u.transpose();
      const MatrixXd g_dense = oracle::dense_ar1_G(rho, view.n_per_subject);
      MatrixXd g_dot = MatrixXd::Zero(view.n, view.n);
      {
        int at = 0;
        const double r2 = rho * rho;
        for (int ni : view.n_per_subject) {
          for (int j = 0; j < ni; ++j)
            for (int k = 0; k < ni; ++k) {
              const int h = std::abs(j - k);
              const double num =
                  (h == 0 ? 0.0 : h * std::pow(rho, h - 1) * (1.0 - r2)) +
                  2.0 * std::pow(rho, h + 1);
              g_dot(at + j, at + k) = num / ((1.0 - r2) * (1.0 - r2));
            }
          at += ni;
        }
      }
      const Eigen::PartialPivLU<MatrixXd> lu(g_dense);
      const MatrixXd ginv_gdot = lu.solve(g_dot);
      const double term1 = ginv_gdot.trace();
      const double term2 = (ginv_gdot * lu.solve(m_mat)).trace() / theta;
      const double dense_res = std::abs(term1 - term2) /
                               std::max({1.0, std::abs(term1),
                                         std::abs(term2)});
      if (!(dense_res < 1e-6)) fail(fmt("dense residual %.2e", dense_res));
    }
  }

  // (f) kappa = 0 penalized fit equals the unpenalized fit.
  {
    SimConfig cfg = SimConfig::defaults();
    cfg.m = 60;
    cfg.seed = 778;
    auto rng = replication_rng(cfg.seed, 0);
    const auto data = gen_dataset(cfg, rng).first;
    const auto view = order_records(data);
    const auto base = fit_unpenalized(view, Frailty::constant, FitOptions{});
    for (PenaltyKind kind : {PenaltyKind::scad, PenaltyKind::alasso}) {
      SelectionOptions sopts;
      sopts.fixed_kappa = true;
      sopts.kappa1 = sopts.kappa2 = 0.0;
      const auto pen = fit_penalized(view, base, kind, sopts);
      const double dev = std::max(
          (pen.sel.alpha_hat - base.params.alpha).lpNorm<Eigen::Infinity>(),
          (pen.sel.beta_hat - base.params.beta).lpNorm<Eigen::Infinity>());
      if (!(dev < 1e-6)) fail(fmt("kappa=0 deviation %.2e", dev));
    }
  }

  // (g) Breslow baseline equals the naive double-loop oracle on n <= 10.
  {
    const auto data = oracle::random_dataset(4, 1, 1, 779u, 0.7, 2, true);
    const auto view = order_records(data);
    if (view.n > 10) {
      fail("breslow fixture larger than n=10");
    } else {
      const auto g = oracle::random_g(view, 780u);
      const auto prm =
          oracle::random_params(view, Frailty::constant, 781u, 0.5);
      const auto lp = linear_predictors(prm, view);
      const auto base = baseline_breslow_etail(view, g, lp.eta);
      const auto naive = oracle::naive_breslow(view, g, lp.eta);
      bool same = base.knots.size() == naive.times.size();
      for (size_t k = 0; same && k < base.knots.size(); ++k)
        same = base.knots[k] == naive.times[k] &&
               base.cumhaz[k] == naive.cumhaz[k];
      if (!same) fail("breslow != naive oracle (exact comparison)");

      // (h) ETAIL continuity at t_h (exact construction, ulp-level check).
      const double at = base.cumulative_hazard(base.t_h);
      const double above =
          base.cumulative_hazard(std::nextafter(base.t_h, 1e300));
      if (!(std::abs(above - at) <= 1e-12 * std::max(1.0, at)))
        fail(fmt("ETAIL gap at t_h: %.3e", std::abs(above - at)));
    }
  }

  if (ok) detail = "score/Hessian FD, SCAD continuity, AR(1) inverse, rho "
                   "residuals, kappa=0 equality, Breslow exactness, ETAIL";
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// Criterion 6: degenerate reduction to independent logistic + Cox fits.

std::pair<bool, std::string> criterion6() {
  // Cleanly separated theta=0 data: uncured subjects contribute only events
  // at small gap times, cured subjects only large censored times, so the
  // E-step posterior is 1 exactly at events and ~0 at censored records.
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> normal(0, 1);
  std::uniform_real_distribution<double> unif(0, 1);
  const int m = 80;
  MatrixXd x(m, 2), z(m, 2);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < 2; ++j) {
      x(i, j) = normal(rng);
      z(i, j) = normal(rng);
    }
  std::vector<oracle::Rec> recs;
  for (int i = 0; i < m; ++i) {
    const bool uncured = i < m / 2;
    const int ni = 1 + static_cast<int>(unif(rng) * 3) % 3;
    for (int k = 0; k < ni; ++k) {
      oracle::Rec rec;
      rec.subject = i + 1;
      if (uncured) {
        rec.t = 0.1 + 0.9 * unif(rng);
        rec.status = 1;
      } else {
        rec.t = 50.0 + 100.0 * unif(rng);
        rec.status = 0;
      }
      recs.push_back(rec);
    }
  }
  const auto data = oracle::build_dataset(x, z, recs);
  const auto view = order_records(data);

  FitOptions opts;
  opts.theta_init = 1e-5;  // variance held at its floor (theta = 0 truth)
  const auto fit = fit_unpenalized(view, Frailty::constant, opts);

  bool ok = true;
  std::string detail;

  // g_r = 1 wherever delta_r = 1: on the converged posterior and on direct
  // E-step evaluations at randomized parameter points.
  for (int r = 0; r < view.n; ++r)
    if (view.delta[r] == 1 && fit.g[r] != 1.0) ok = false;
  for (unsigned seed : {1u, 2u, 3u}) {
    const auto prm = oracle::random_params(view, Frailty::constant, seed, 0.5);
    const auto lp = linear_predictors(prm, view);
    const auto g0 = oracle::random_g(view, seed + 10);
    const auto baseline = baseline_breslow_etail(view, g0, lp.eta);
    int clamps = 0;
    const VectorXd g = e_step(view, lp, baseline, &clamps);
    for (int r = 0; r < view.n; ++r)
      if (view.delta[r] == 1 && g[r] != 1.0) ok = false;
  }
  if (!ok) detail = "E-step posterior != 1 at an event record; ";

  // Incidence reduces to an independent logistic fit of delta on W.
  VectorXd y(view.n);
  for (int r = 0; r < view.n; ++r) y[r] = view.delta[r];
  const VectorXd alpha_ref = oracle::logistic_mle(view.W, y);
  const double alpha_dev =
      (fit.params.alpha - alpha_ref).lpNorm<Eigen::Infinity>();

  // Latency reduces to an independent Cox fit on the event records.
  std::vector<int> ev;
  for (int r = 0; r < view.n; ++r)
    if (view.delta[r] == 1) ev.push_back(r);
  MatrixXd z_ev(ev.size(), view.p);
  VectorXd t_ev(ev.size());
  Eigen::VectorXi d_ev(ev.size());
  for (size_t k = 0; k < ev.size(); ++k) {
    z_ev.row(k) = view.Z.row(ev[k]);
    t_ev[k] = view.t[ev[k]];
    d_ev[k] = 1;
  }
  const VectorXd beta_ref = oracle::cox_mle(z_ev, t_ev, d_ev);
  const double beta_dev =
      (fit.params.beta - beta_ref).lpNorm<Eigen::Infinity>();

  if (alpha_dev >= 1e-3 || beta_dev >= 1e-3) ok = false;
  detail += fmt("max|alpha-logistic|=%.2e max|beta-cox|=%.2e (tol 1e-3); "
                "theta=%.2e",
                alpha_dev, beta_dev, fit.params.theta);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// Criterion 7: 21-covariate planted-support fixture + CLI header layout.
//
// The 21 candidates are split between the submodels: x1..x10 compete for the
// incidence part (planted signals x1, x2, x3) and x11..x21 for the latency
// part (planted signals x11, x12, x13), with independent covariates and 5-9
// records per subject so both submodels see enough information for exact
// recovery.

RecurrentDataset split_candidates(RecurrentDataset full) {
  RecurrentDataset data;
  data.rows = std::move(full.rows);
  data.subject_ids = std::move(full.subject_ids);
  data.subject_of_row = std::move(full.subject_of_row);
  data.x = full.x.leftCols(10);
  data.z = full.x.rightCols(11);
  data.incidence_names.assign(full.incidence_names.begin(),
                              full.incidence_names.begin() + 10);
  data.latency_names.assign(full.incidence_names.begin() + 10,
                            full.incidence_names.end());
  return data;
}

std::pair<bool, std::string> criterion7() {
  SimConfig cfg = SimConfig::defaults();
  cfg.m = 600;
  cfg.d = 21;
  cfg.ni_min = 5;
  cfg.ni_max = 9;
  cfg.pairwise_corr = 0.0;
  cfg.alpha_true = VectorXd::Zero(22);
  cfg.alpha_true[0] = 0.8;
  cfg.alpha_true[1] = 1.0;
  cfg.alpha_true[2] = -0.9;
  cfg.alpha_true[3] = 0.8;
  cfg.beta_true = VectorXd::Zero(21);
  cfg.beta_true[10] = -1.0;
  cfg.beta_true[11] = 0.9;
  cfg.beta_true[12] = 0.8;
  cfg.theta_true = 0.25;

  const std::vector<int> want_alpha = {1, 2, 3};  // coef positions: x1..x3
  const std::vector<int> want_beta = {0, 1, 2};   // z columns: x11..x13

  int scad_hits = 0, alasso_hits = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    cfg.seed = 31000 + s;
    auto rng = replication_rng(cfg.seed, 0);
    const auto data = split_candidates(gen_dataset(cfg, rng).first);
    const auto view = order_records(data);
    const auto base = fit_unpenalized(view, Frailty::constant, FitOptions{});
    for (PenaltyKind kind : {PenaltyKind::scad, PenaltyKind::alasso}) {
      const auto pen = fit_penalized(view, base, kind,
                                     study_selection_options());
      std::vector<int> got_alpha, got_beta;
      for (int j = 1; j < pen.sel.alpha_hat.size(); ++j)
        if (pen.sel.alpha_hat[j] != 0.0) got_alpha.push_back(j);
      for (int j = 0; j < pen.sel.beta_hat.size(); ++j)
        if (pen.sel.beta_hat[j] != 0.0) got_beta.push_back(j);
      const bool exact = got_alpha == want_alpha && got_beta == want_beta;
      (kind == PenaltyKind::scad ? scad_hits : alasso_hits) += exact;
    }
    std::fprintf(stderr, "[acceptance] fixture seed %d/%d done\n", s + 1,
                 seeds);
  }
  bool ok = scad_hits >= 18 && alasso_hits >= 18;
  std::string detail = fmt("exact support: scad %d/%d alasso %d/%d (need 18)",
                           scad_hits, seeds, alasso_hits, seeds);

  // CLI run on the same kind of dataset: header layout is frozen.
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fmcure_acceptance_cli";
  fs::create_directories(dir);
  cfg.seed = 31000;
  auto rng = replication_rng(cfg.seed, 0);
  const auto data = split_candidates(gen_dataset(cfg, rng).first);
  write_dataset_csv(data, (dir / "fixture.csv").string());
  {
    std::ofstream config(dir / "fixture.conf");
    config << "incidence_covariates = ";
    for (int j = 0; j < 10; ++j) config << (j ? "," : "") << "x" << j + 1;
    config << "\nlatency_covariates = ";
    for (int j = 10; j < 21; ++j) config << (j > 10 ? "," : "") << "x" << j + 1;
    config << "\n";
  }
  const std::string cmd = std::string(FMCURE_CLI_PATH) + " fit --data " +
                          (dir / "fixture.csv").string() + " --config " +
                          (dir / "fixture.conf").string() +
                          " --penalty scad --out " + (dir / "out").string() +
                          " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  const bool exited_ok = WIFEXITED(rc) && WEXITSTATUS(rc) == 0;
  std::string header;
  std::ifstream coefs(dir / "out" / "coefficients.csv");
  while (std::getline(coefs, header))
    if (!header.empty() && header[0] != '#') break;
  const bool header_ok =
      header == "submodel,variable,estimate,ase,p_value,zeroed";
  if (!exited_ok || !header_ok) ok = false;
  detail += fmt("; cli exit %s, header %s", exited_ok ? "0" : "NONZERO",
                header_ok ? "frozen" : ("MISMATCH [" + header + "]").c_str());
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  using Criterion = std::function<std::pair<bool, std::string>()>;
  // Cheap criteria first; 1/2 share the (600, 0.5) cell; 4 builds (600, 1.5)
  // at full replications before 3 reuses it.
  const std::vector<std::pair<int, Criterion>> criteria = {
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {1, criterion1},
      {2, criterion2}, {4, criterion4}, {3, criterion3},
  };
  std::vector<int> only;
  for (int a = 1; a < argc; ++a) only.push_back(std::atoi(argv[a]));

  std::map<int, std::pair<bool, std::string>> results;
  for (const auto& [num, fn] : criteria) {
    if (!only.empty() &&
        std::find(only.begin(), only.end(), num) == only.end())
      continue;
    std::pair<bool, std::string> res;
    try {
      res = fn();
    } catch (const std::exception& err) {
      res = {false, std::string("exception: ") + err.what()};
    }
    results[num] = res;
    std::fprintf(stderr, "[acceptance] criterion %d finished: %s\n", num,
                 res.first ? "PASS" : "FAIL");
  }

  int failures = 0;
  for (const auto& [num, res] : results) {
    std::printf("CRITERION %d: %s — %s\n", num, res.first ? "PASS" : "FAIL",
                res.second.c_str());
    if (!res.first) ++failures;
  }
  std::fflush(stdout);
  return failures;
}
