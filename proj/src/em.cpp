#include "fmcure/em.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace fmcure {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Factorize with escalating ridge; throws FactorizationError if even the
// largest ridge fails (factorize() reruns to recover the leading minor).
double ladder_factorize(InfoMatrix& info) {
  if (info.try_factorize(0.0)) return 0.0;
  for (double r = 1e-8; r < 1.5e-2; r *= 10.0)
    if (info.try_factorize(r)) return r;
  info.factorize(1e-2);
  return 1e-2;
}

Eigen::VectorXd packed(const ModelParams& p) {
  Eigen::VectorXd v(p.packed_dim());
  v << p.alpha, p.beta, p.u;
  return v;
}

void apply_packed(ModelParams& p, const Eigen::VectorXd& v) {
  const auto na = p.alpha.size(), nb = p.beta.size(), nu = p.u.size();
  p.alpha = v.head(na);
  p.beta = v.segment(na, nb);
  p.u = v.tail(nu);
}

// Logistic regression of the event indicator on W; starting value for alpha.
Eigen::VectorXd logistic_irls(const OrderedView& view) {
  const Eigen::VectorXd y = view.delta.cast<double>();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(view.W.cols());
  for (int it = 0; it < 25; ++it) {
    const Eigen::VectorXd xi = view.W * a;
    const Eigen::VectorXd p = xi.unaryExpr([](double v) { return sigmoid(v); });
    const Eigen::VectorXd grad = view.W.transpose() * (y - p);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9) break;
    const Eigen::VectorXd wgt = p.array() * (1.0 - p.array());
    Eigen::MatrixXd h = view.W.transpose() * wgt.asDiagonal() * view.W;
    h.diagonal().array() += 1e-8;
    const Eigen::VectorXd step = h.ldlt().solve(grad);
    a += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return a;
}

void check_options(const FitOptions& opts, Frailty structure) {
  if (!(opts.theta_init > 0)) throw ConfigError("theta_init must be > 0");
  if (!(opts.theta_floor > 0)) throw ConfigError("theta_floor must be > 0");
  if (opts.max_em_iter < 1 || opts.max_newton_iter < 1)
    throw ConfigError("iteration limits must be >= 1");
  if (!(opts.em_tol > 0) || !(opts.param_tol > 0))
    throw ConfigError("tolerances must be > 0");
  if (structure == Frailty::ar1 && std::abs(opts.rho_init) >= 0.999)
    throw ConfigError("rho_init must lie in (-0.999, 0.999)");
}

}  // namespace

double BaselineSurvival::cumulative_hazard(double t) const {
  if (!(t > 0)) return 0.0;
  if (t > t_h) return psi_hat * t;
  // largest knot <= t
  auto it = std::upper_bound(knots.begin(), knots.end(), t);
  if (it == knots.begin()) return 0.0;
  return cumhaz[static_cast<size_t>(it - knots.begin()) - 1];
}

double BaselineSurvival::operator()(double t) const {
  return std::exp(-cumulative_hazard(t));
}

BaselineSurvival baseline_breslow_etail(const OrderedView& view,
                                        const Eigen::VectorXd& g,
                                        const Eigen::VectorXd& eta) {
  if (view.event_pos.empty())
    throw DegenerateError("baseline requires at least one uncensored event");
  const LatencyWorkspace ws = latency_workspace(view, g, eta);

  BaselineSurvival out;
  int last_gid = -1;
  for (int r : view.event_pos) {
    const int gid = view.group_of[r];
    if (gid == last_gid) continue;  // one knot per tied event time
    last_gid = gid;
    const int start = view.group_start[gid];
    out.knots.push_back(view.t[start]);
    out.cumhaz.push_back(ws.s[start]);  // tie-inclusive cumulative hazard
  }
  out.t_h = out.knots.back();
  if (!(out.t_h > 0))
    throw DegenerateError("largest uncensored time must be positive");
  out.psi_hat = out.cumhaz.back() / out.t_h;  // continuous exponential tail
  out.values.resize(out.knots.size());
  for (size_t k = 0; k < out.knots.size(); ++k)
    out.values[k] = std::exp(-out.cumhaz[k]);
  return out;
}

Eigen::VectorXd e_step(const OrderedView& view, const LinearPredictors& lp,
                       const BaselineSurvival& baseline, int* clamp_count) {
  Eigen::VectorXd g(view.n);
  for (int r = 0; r < view.n; ++r) {
    if (view.delta[r] == 1) {
      g[r] = 1.0;
      continue;
    }
    const double lambda = baseline.cumulative_hazard(view.t[r]);
    if (lambda <= 0) {  // S(t) = 1: posterior reduces to the incidence odds
      g[r] = sigmoid(lp.xi[r]);
      continue;
    }
    // g = pi*S^w / (1 - pi + pi*S^w) with w = exp(eta) collapses to
    // sigmoid(xi - w*Lambda); exact and overflow-safe.
    const double wl = std::exp(lp.eta[r]) * lambda;
    if (!std::isfinite(wl)) {
      if (clamp_count) ++*clamp_count;
      g[r] = 0.0;
      continue;
    }
    g[r] = sigmoid(lp.xi[r] - wl);
  }
  return g;
}

InfoMatrix newton_mstep(const OrderedView& view, ModelParams& params,
                        const Eigen::VectorXd& g, const FitOptions& opts,
                        NewtonReport* report) {
  NewtonReport local;
  NewtonReport& rep = report ? *report : local;
  rep = NewtonReport{};

  double ll = blup_loglik(params, view, g);
  rep.converged = false;
  for (int it = 0; it < opts.max_newton_iter; ++it) {
    const Eigen::VectorXd sc = score(params, view, g);
    if (sc.lpNorm<Eigen::Infinity>() < 1e-10) {
      rep.converged = true;
      break;
    }
    InfoMatrix info = info_matrix(params, view, g);
    rep.ridge = std::max(rep.ridge, ladder_factorize(info));
    const Eigen::VectorXd dir = info.solve(sc);
    if (!dir.allFinite()) break;

    const Eigen::VectorXd base = packed(params);
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h < 20; ++h) {
      ModelParams cand = params;
      apply_packed(cand, base + step * dir);
      const double ll_cand = blup_loglik(cand, view, g);
      if (std::isfinite(ll_cand) && ll_cand >= ll - 1e-12) {
        params = std::move(cand);
        ll = ll_cand;
        accepted = true;
        break;
      }
      step *= 0.5;
      ++rep.halvings;
    }
    ++rep.iterations;
    if (!accepted) break;  // no ascent available along the Newton direction
    if (step * dir.lpNorm<Eigen::Infinity>() < 1e-12) {
      rep.converged = true;
      break;
    }
  }
  rep.final_loglik = ll;

  InfoMatrix info = info_matrix(params, view, g);
  rep.ridge = std::max(rep.ridge, ladder_factorize(info));
  return info;
}

double reml_theta_constant(const InfoMatrix& info, const Eigen::VectorXd& u,
                           double theta_floor) {
  const double m = static_cast<double>(u.size());
  return std::max(theta_floor,
                  (info.trace_inverse_uu() + u.squaredNorm()) / m);
}

double ml_theta_constant(const InfoMatrix& info, const Eigen::VectorXd& u,
                         double theta_floor) {
  const Eigen::MatrixXd zuu = info.zeta_uu();
  Eigen::LLT<Eigen::MatrixXd> llt(zuu);
  if (llt.info() != Eigen::Success)
    throw FactorizationError("random-effect information block", 0);
  const Eigen::Index nu = zuu.rows();
  const Eigen::MatrixXd linv =
      llt.matrixL().solve(Eigen::MatrixXd::Identity(nu, nu));
  const double m = static_cast<double>(u.size());
  return std::max(theta_floor, (linv.squaredNorm() + u.squaredNorm()) / m);
}

Ar1Traces ar1_traces(const InfoMatrix& info, const Eigen::VectorXd& u,
                     const std::vector<int>& n_per_subject,
                     Variance variance) {
  Eigen::MatrixXd suu;
  if (variance == Variance::reml) {
    suu = info.inverse_block_uu();
  } else {
    const Eigen::MatrixXd zuu = info.zeta_uu();
    Eigen::LLT<Eigen::MatrixXd> llt(zuu);
    if (llt.info() != Eigen::Success)
      throw FactorizationError("random-effect information block", 0);
    suu = llt.solve(Eigen::MatrixXd::Identity(zuu.rows(), zuu.cols()));
  }
  // M = Sigma*_{uu} + u u'; accumulate entries without forming u u'.
  auto mentry = [&](int a, int b) { return suu(a, b) + u[a] * u[b]; };

  Ar1Traces tr;
  tr.b1 = suu.trace() + u.squaredNorm();
  int offset = 0;
  for (int ni : n_per_subject) {
    for (int j = 1; j < ni; ++j)
      tr.b2 += mentry(offset + j - 1, offset + j);
    if (ni == 1) {
      tr.b3 += 2.0 * mentry(offset, offset);
    } else {
      tr.b3 += mentry(offset, offset) +
               mentry(offset + ni - 1, offset + ni - 1);
    }
    offset += ni;
  }
  return tr;
}

double reml_theta_ar1(const Ar1Traces& tr, double rho, int n,
                      double theta_floor) {
  const double val =
      ((1.0 + rho * rho) * tr.b1 - 2.0 * rho * tr.b2 - rho * rho * tr.b3) / n;
  return std::max(theta_floor, val);
}

RhoUpdate update_rho_ar1(const Ar1Traces& tr, int n, int m, double rho_current,
                         const Eigen::VectorXd& u,
                         const std::vector<int>& n_per_subject,
                         double theta_floor) {
  const double dn = n, dm = m;
  const double a1 = (dn - dm) * (tr.b1 - tr.b3);
  const double a2 = (2.0 * dm - dn) * tr.b2;
  const double a3 = dn * tr.b3 - (dn + dm) * tr.b1;
  const double a4 = dn * tr.b2;
  const double scale = std::max({std::abs(a1), std::abs(a2), std::abs(a3),
                                 std::abs(a4)});

  RhoUpdate out;
  out.rho = rho_current;
  if (scale < 1e-300) {  // identically zero: rho unidentified (n == m)
    out.kept_current = true;
    return out;
  }

  auto f = [&](double x) { return ((a1 * x + a2) * x + a3) * x + a4; };
  auto fp = [&](double x) { return (3.0 * a1 * x + 2.0 * a2) * x + a3; };

  const double lo = -0.999, hi = 0.999;
  std::vector<double> roots;
  auto add_root = [&](double x) {
    if (!(x > lo && x < hi)) return;
    if (std::abs(f(x)) > 1e-8 * scale) return;
    for (double r : roots)
      if (std::abs(r - x) < 1e-6) return;
    roots.push_back(x);
  };

  // Newton from the current value.
  double x = std::clamp(rho_current, lo + 1e-3, hi - 1e-3);
  for (int it = 0; it < 50; ++it) {
    const double fx = f(x), fpx = fp(x);
    if (std::abs(fpx) < 1e-14 * std::max(scale, 1.0)) break;
    const double xn = std::clamp(x - fx / fpx, lo, hi);
    const double delta = std::abs(xn - x);
    x = xn;
    if (delta < 1e-13) break;
  }
  add_root(x);

  // Grid scan with bisection picks up remaining sign changes.
  const int grid = 2000;
  double xprev = lo, fprev = f(lo);
  for (int i = 1; i <= grid; ++i) {
    const double xi = lo + (hi - lo) * i / grid;
    const double fi = f(xi);
    if (fprev == 0.0) add_root(xprev);
    if (fprev * fi < 0.0) {
      double a = xprev, b = xi, fa = fprev;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b), fmid = f(mid);
        if (fa * fmid <= 0.0) {
          b = mid;
        } else {
          a = mid;
          fa = fmid;
        }
      }
      add_root(0.5 * (a + b));
    }
    xprev = xi;
    fprev = fi;
  }

  if (roots.empty()) {
    out.kept_current = true;
    return out;
  }

  // Quadratic form u'G^{-1}u via the banded structure of G^{-1}.
  const double c1 = u.squaredNorm();
  double c2 = 0, c3 = 0;
  int offset = 0;
  for (int ni : n_per_subject) {
    for (int j = 1; j < ni; ++j) c2 += u[offset + j - 1] * u[offset + j];
    if (ni == 1) {
      c3 += 2.0 * u[offset] * u[offset];
    } else {
      c3 += u[offset] * u[offset] +
            u[offset + ni - 1] * u[offset + ni - 1];
    }
    offset += ni;
  }
  // Profiled random-effect log-likelihood, up to constants.
  auto profile = [&](double r) {
    const double theta = reml_theta_ar1(tr, r, n, theta_floor);
    const double quad =
        (1.0 + r * r) * c1 - 2.0 * r * c2 - r * r * c3;
    return -0.5 * (dn * std::log(theta) - dm * std::log1p(-r * r) +
                   quad / theta);
  };

  double best = roots.front();
  double best_h = profile(best);
  for (size_t i = 1; i < roots.size(); ++i) {
    const double h = profile(roots[i]);
    if (h > best_h + 1e-12 ||
        (std::abs(h - best_h) <= 1e-12 &&
         std::abs(roots[i] - rho_current) < std::abs(best - rho_current))) {
      best = roots[i];
      best_h = h;
    }
  }
  out.rho = best;
  return out;
}

UnpenalizedFit fit_unpenalized(const OrderedView& view, Frailty structure,
                               const FitOptions& opts) {
  check_options(opts, structure);

  UnpenalizedFit out;
  out.params = make_params(view, structure);
  out.params.theta = std::max(opts.theta_init, opts.theta_floor);
  out.params.rho = structure == Frailty::ar1 ? opts.rho_init : 0.0;
  out.params.alpha = logistic_irls(view);

  // Bootstrap baseline: treat the event indicator as the uncured weight.
  const Eigen::VectorXd delta_d = view.delta.cast<double>();
  out.baseline = baseline_breslow_etail(view, delta_d,
                                        Eigen::VectorXd::Zero(view.n));

  double ll_prev = std::numeric_limits<double>::quiet_NaN();
  for (int iter = 1; iter <= opts.max_em_iter; ++iter) {
    const Eigen::VectorXd alpha0 = out.params.alpha;
    const Eigen::VectorXd beta0 = out.params.beta;
    const Eigen::VectorXd u0 = out.params.u;
    const double theta0 = out.params.theta, rho0 = out.params.rho;

    LinearPredictors lp = linear_predictors(out.params, view);
    out.g = e_step(view, lp, out.baseline, &out.diag.g_clamps);

    NewtonReport rep;
    InfoMatrix info = newton_mstep(view, out.params, out.g, opts, &rep);
    out.diag.newton_total_iterations += rep.iterations;

    lp = linear_predictors(out.params, view);
    out.baseline = baseline_breslow_etail(view, out.g, lp.eta);

    if (structure == Frailty::constant) {
      out.params.theta =
          opts.variance == Variance::reml
              ? reml_theta_constant(info, out.params.u, opts.theta_floor)
              : ml_theta_constant(info, out.params.u, opts.theta_floor);
    } else {
      const Ar1Traces tr =
          ar1_traces(info, out.params.u, view.n_per_subject, opts.variance);
      if (!opts.fix_rho) {
        const RhoUpdate ru =
            update_rho_ar1(tr, view.n, view.m, out.params.rho, out.params.u,
                           view.n_per_subject, opts.theta_floor);
        out.params.rho = ru.rho;
      }
      out.params.theta =
          reml_theta_ar1(tr, out.params.rho, view.n, opts.theta_floor);
    }

    double max_delta =
        std::max({(out.params.alpha - alpha0).lpNorm<Eigen::Infinity>(),
                  out.params.beta.size() > 0
                      ? (out.params.beta - beta0).lpNorm<Eigen::Infinity>()
                      : 0.0,
                  (out.params.u - u0).lpNorm<Eigen::Infinity>(),
                  std::abs(out.params.theta - theta0),
                  std::abs(out.params.rho - rho0)});

    const double ll = blup_loglik(out.params, view, out.g);
    out.diag.trace.push_back({iter, ll, out.params.theta, out.params.rho,
                              max_delta});
    out.iterations = iter;
    if (opts.verbose)
      std::fprintf(stderr,
                   "[em] iter=%d loglik=%.8f theta=%.6f rho=%.4f "
                   "max_delta=%.3e\n",
                   iter, ll, out.params.theta, out.params.rho, max_delta);

    if (iter >= 2) {
      if (ll < ll_prev - 1e-8) ++out.diag.ascent_violations;
      const double rel = std::abs(ll - ll_prev) / (std::abs(ll_prev) + 1.0);
      if (rel < opts.em_tol && max_delta < opts.param_tol) {
        out.converged = true;
        ll_prev = ll;
        break;
      }
    }
    ll_prev = ll;
  }

  out.info = info_matrix(out.params, view, out.g);
  out.diag.final_ridge = ladder_factorize(out.info);
  out.diag.final_score_norm =
      score(out.params, view, out.g).lpNorm<Eigen::Infinity>();
  out.loglik = blup_loglik(out.params, view, out.g);
  return out;
}

UnpenalizedFit fit_unpenalized(const RecurrentDataset& data, Frailty structure,
                               const FitOptions& opts) {
  const OrderedView view = order_records(data);
  return fit_unpenalized(view, structure, opts);
}

UnpenalizedFit fit_unpenalized_ml(const RecurrentDataset& data,
                                  Frailty structure, const FitOptions& opts) {
  FitOptions ml_opts = opts;
  ml_opts.variance = Variance::ml;
  return fit_unpenalized(data, structure, ml_opts);
}

}  // namespace fmcure
