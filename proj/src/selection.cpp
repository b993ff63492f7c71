#include "fmcure/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fmcure {

namespace {

constexpr double kTauZero = 1e-4;   // hard-zero threshold inside LQA
constexpr double kLqaEps = 1e-8;    // LQA denominator floor
constexpr double kLqaTol = 1e-8;    // block-update convergence
constexpr int kLqaMaxIter = 100;

// Cholesky solve with the same escalating ridge as the Newton M-step.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs,
                          bool* bumped) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  for (double r = 1e-8; r < 1.5e-2; r *= 10.0) {
    Eigen::MatrixXd ar = a;
    ar.diagonal().array() += r;
    llt.compute(ar);
    if (llt.info() == Eigen::Success) {
      if (bumped) *bumped = true;
      return llt.solve(rhs);
    }
  }
  throw FactorizationError("LQA block system", 0);
}

// Inverse of a symmetric positive-definite matrix with the same escalating
// ridge; the input is symmetrized first to scrub solver round-off.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a) {
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  const Eigen::MatrixXd eye =
      Eigen::MatrixXd::Identity(sym.rows(), sym.cols());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success) return llt.solve(eye);
  for (double r = 1e-10; r < 1.5e-2; r *= 10.0) {
    Eigen::MatrixXd ar = sym;
    ar.diagonal().array() += r;
    llt.compute(ar);
    if (llt.info() == Eigen::Success) return llt.solve(eye);
  }
  throw FactorizationError("LSA covariance block", 0);
}

// True when the LQA solve at this kappa zeroes every penalized coordinate.
bool fit_zeroes_all(const LsaProblem& problem, Submodel block, double kappa) {
  const bool inc = block == Submodel::incidence;
  const Eigen::VectorXd est = lsa_fit_block(problem, block, kappa);
  for (int j = inc ? 1 : 0; j < est.size(); ++j)
    if (est[j] != 0.0) return false;
  return true;
}

double block_kappa_max(const LsaProblem& problem, Submodel block) {
  const bool inc = block == Submodel::incidence;
  const Eigen::MatrixXd& m = inc ? problem.m_alpha : problem.m_beta;
  const Eigen::VectorXd& wt = inc ? problem.alpha_tilde : problem.beta_tilde;
  const int first_pen = inc ? 1 : 0;
  if (wt.size() == first_pen) return 1.0;

  // Stationarity bound for the all-zero block: with phi'(0+) = kappa*w the
  // zero vector is a minimiser once kappa*w_j >= 2|(M omega~)_j| / n for
  // every penalized j.  Both penalties share this near-zero slope.
  const Eigen::VectorXd rhs = m * wt;
  double start = 0;
  for (int j = first_pen; j < wt.size(); ++j) {
    const double w = problem.spec.kind == PenaltyKind::alasso
                         ? problem.spec.weight(block, j)
                         : 1.0;
    start = std::max(start, 2.0 * std::abs(rhs[j]) / (problem.n * w));
  }
  if (!(start > 0) || !std::isfinite(start)) return 1.0;

  // Bracket the smallest kappa whose full LQA fit is all-zero, then bisect.
  double lo = 0, hi = start;
  if (fit_zeroes_all(problem, block, hi)) {
    double probe = hi;
    for (int it = 0; it < 60; ++it) {
      probe *= 0.5;
      if (!fit_zeroes_all(problem, block, probe)) {
        lo = probe;
        break;
      }
      hi = probe;
    }
    if (lo == 0) return start;  // zeroes at any kappa; keep the analytic bound
  } else {
    int guard = 0;
    while (!fit_zeroes_all(problem, block, hi) && guard++ < 60) {
      lo = hi;
      hi *= 2.0;
    }
    if (!fit_zeroes_all(problem, block, hi)) return hi;  // give up, span up
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (fit_zeroes_all(problem, block, mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

std::vector<double> geometric_grid(double kappa_max, int size) {
  std::vector<double> out;
  out.reserve(size);
  if (size <= 1) {
    out.push_back(kappa_max);
    return out;
  }
  // kappa_max*1e-4 .. kappa_max, geometric
  for (int i = 0; i < size; ++i)
    out.push_back(kappa_max *
                  std::pow(10.0, -4.0 * (1.0 - double(i) / (size - 1))));
  return out;
}

int count_nonzero(const Eigen::VectorXd& v) {
  int c = 0;
  for (int j = 0; j < v.size(); ++j)
    if (v[j] != 0.0) ++c;
  return c;
}

}  // namespace

LsaProblem make_lsa_problem(const UnpenalizedFit& base, const PenaltySpec& spec,
                            int n) {
  if (!base.info.factorized())
    throw Error("make_lsa_problem requires a factorized information matrix");
  LsaProblem p;
  p.alpha_tilde = base.params.alpha;
  p.beta_tilde = base.params.beta;

  // Covariance of the fixed-effect estimates: the leading block of the full
  // inverse information. Its (block-)inverses are the LSA weights; inverting
  // after the random effects are integrated into the covariance keeps the
  // curvature honest about what the shared frailty absorbs.
  const int na = base.info.na, nb = base.info.nb;
  const int nf = na + nb;
  Eigen::MatrixXd unit = Eigen::MatrixXd::Zero(base.info.dim(), nf);
  for (int j = 0; j < nf; ++j) unit(j, j) = 1.0;
  const Eigen::MatrixXd cov_ff = base.info.solve(unit).topRows(nf);

  p.m_alpha = spd_inverse(cov_ff.topLeftCorner(na, na));
  p.m_beta = spd_inverse(cov_ff.bottomRightCorner(nb, nb));
  p.m_fixed = spd_inverse(cov_ff);
  p.spec = spec;
  p.n = n;
  return p;
}

KappaGrid make_kappa_grid(const LsaProblem& problem, int size) {
  if (size < 1) throw ConfigError("grid size must be >= 1");
  KappaGrid grid;
  grid.kappa1_values =
      geometric_grid(block_kappa_max(problem, Submodel::incidence), size);
  grid.kappa2_values =
      geometric_grid(block_kappa_max(problem, Submodel::latency), size);
  return grid;
}

Eigen::VectorXd lsa_fit_block(const LsaProblem& problem, Submodel block,
                              double kappa) {
  const bool inc = block == Submodel::incidence;
  const Eigen::MatrixXd& m = inc ? problem.m_alpha : problem.m_beta;
  const Eigen::VectorXd& wt = inc ? problem.alpha_tilde : problem.beta_tilde;
  const int k = static_cast<int>(wt.size());
  if (kappa == 0.0 || problem.spec.kind == PenaltyKind::none) return wt;

  PenaltySpec sp = problem.spec;
  (inc ? sp.kappa1 : sp.kappa2) = kappa;
  const int first_pen = inc ? 1 : 0;
  const Eigen::VectorXd rhs_full = m * wt;
  const double n2 = 0.5 * problem.n;

  Eigen::VectorXd omega = wt;
  std::vector<char> active(k, 1);
  for (int iter = 0; iter < kLqaMaxIter; ++iter) {
    std::vector<int> idx;
    idx.reserve(k);
    for (int j = 0; j < k; ++j)
      if (active[j]) idx.push_back(j);
    if (idx.empty()) break;

    const int ka = static_cast<int>(idx.size());
    Eigen::MatrixXd a(ka, ka);
    Eigen::VectorXd rhs(ka);
    for (int c = 0; c < ka; ++c) {
      for (int r = 0; r < ka; ++r) a(r, c) = m(idx[r], idx[c]);
      rhs[c] = rhs_full[idx[c]];
    }
    for (int c = 0; c < ka; ++c) {
      const int j = idx[c];
      if (j < first_pen) continue;
      const double d = penalty_derivative(sp, omega[j], block, j);
      a(c, c) += n2 * d / std::max(std::abs(omega[j]), kLqaEps);
    }

    const Eigen::VectorXd next = solve_spd(a, rhs, nullptr);
    double delta = 0;
    for (int c = 0; c < ka; ++c) {
      const int j = idx[c];
      delta = std::max(delta, std::abs(next[c] - omega[j]));
      omega[j] = next[c];
    }
    for (int j = first_pen; j < k; ++j) {
      if (active[j] && std::abs(omega[j]) < kTauZero) {
        delta = std::max(delta, std::abs(omega[j]));
        omega[j] = 0.0;
        active[j] = 0;
      }
    }
    if (delta < kLqaTol) break;
  }
  return omega;
}

double bic_score(const Eigen::VectorXd& omega_hat,
                 const Eigen::VectorXd& omega_tilde,
                 const Eigen::MatrixXd& info_q, int n) {
  const Eigen::VectorXd dev = omega_hat - omega_tilde;
  return dev.dot(info_q * dev) / double(n) +
         std::log(double(n)) * count_nonzero(omega_hat) / double(n);
}

SelectionResult grid_search_kappa(const LsaProblem& problem,
                                  const KappaGrid& grid) {
  if (grid.kappa1_values.empty() || grid.kappa2_values.empty())
    throw ConfigError("kappa grid must be nonempty");
  const double logn_n = std::log(double(problem.n)) / problem.n;
  const int na = static_cast<int>(problem.alpha_tilde.size());
  const int nb = static_cast<int>(problem.beta_tilde.size());

  struct AxisFit {
    double kappa = 0;
    Eigen::VectorXd est;
    Eigen::VectorXd dev;  // est - tilde
    double quad = 0;      // dev' M_block,block dev with the joint weight
    int v = 0;
  };
  auto fit_axis = [&](Submodel block, const std::vector<double>& kappas) {
    const bool inc = block == Submodel::incidence;
    const Eigen::VectorXd& wt = inc ? problem.alpha_tilde : problem.beta_tilde;
    const Eigen::MatrixXd mb = inc
                                   ? problem.m_fixed.topLeftCorner(na, na)
                                   : problem.m_fixed.bottomRightCorner(nb, nb);
    std::vector<AxisFit> out;
    out.reserve(kappas.size());
    for (double kappa : kappas) {
      AxisFit f;
      f.kappa = kappa;
      f.est = lsa_fit_block(problem, block, kappa);
      f.dev = f.est - wt;
      f.v = count_nonzero(f.est);
      f.quad = f.dev.dot(mb * f.dev);
      out.push_back(std::move(f));
    }
    return out;
  };

  const auto axis_a = fit_axis(Submodel::incidence, grid.kappa1_values);
  const auto axis_b = fit_axis(Submodel::latency, grid.kappa2_values);

  // Joint BIC over all pairs; the cross term couples the axes because the
  // profiled weight has a nonzero alpha/beta block. Scanning ascending with
  // `<=` acceptance breaks ties toward the larger (sparser) kappa pair.
  const Eigen::MatrixXd m_ab = problem.m_fixed.topRightCorner(na, nb);
  SelectionResult out;
  out.bic_path.reserve(axis_a.size() * axis_b.size());
  size_t best_i = 0, best_j = 0;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < axis_a.size(); ++i) {
    const Eigen::VectorXd cross = m_ab.transpose() * axis_a[i].dev;
    for (size_t j = 0; j < axis_b.size(); ++j) {
      const double quad =
          axis_a[i].quad + axis_b[j].quad + 2.0 * cross.dot(axis_b[j].dev);
      const double bic =
          quad / problem.n + logn_n * (axis_a[i].v + axis_b[j].v);
      out.bic_path.push_back(
          {axis_a[i].kappa, axis_b[j].kappa, bic, axis_a[i].v + axis_b[j].v});
      if (bic <= best) {
        best = bic;
        best_i = i;
        best_j = j;
      }
    }
  }

  out.alpha_hat = axis_a[best_i].est;
  out.beta_hat = axis_b[best_j].est;
  out.kappa1 = axis_a[best_i].kappa;
  out.kappa2 = axis_b[best_j].kappa;
  out.v = axis_a[best_i].v + axis_b[best_j].v;
  out.bic = best;
  return out;
}

SandwichCov sandwich_cov(const Eigen::VectorXd& alpha_hat,
                         const Eigen::VectorXd& beta_hat,
                         const InfoMatrix& info, const PenaltySpec& spec,
                         int n) {
  if (!info.factorized())
    throw Error("sandwich_cov requires a factorized information matrix");
  const int na = static_cast<int>(alpha_hat.size());
  const int nb = static_cast<int>(beta_hat.size());
  const int nu = info.nu;
  if (na != info.na || nb != info.nb)
    throw Error("sandwich_cov dimension mismatch");
  const int nf = na + nb;

  Eigen::VectorXd omega(nf);
  omega << alpha_hat, beta_hat;

  std::vector<int> kept;  // fixed-effect coordinates surviving selection
  kept.reserve(nf);
  for (int j = 0; j < nf; ++j)
    if (omega[j] != 0.0) kept.push_back(j);
  const int nk = static_cast<int>(kept.size());

  // Full index set of the reduced system: kept fixed effects then all u.
  std::vector<int> sel(nk + nu);
  for (int c = 0; c < nk; ++c) sel[c] = kept[c];
  for (int c = 0; c < nu; ++c) sel[nk + c] = nf + c;
  const int ns = nk + nu;

  // A has 1/omega_j^2 at kept fixed effects (including the intercept) and
  // zeros elsewhere; psi carries the LQA penalty curvature.
  Eigen::VectorXd avec(nk), psi(nk);
  for (int c = 0; c < nk; ++c) {
    const int j = kept[c];
    avec[c] = 1.0 / (omega[j] * omega[j]);
    if ((j < na && j == 0) || spec.kind == PenaltyKind::none) {
      psi[c] = 0.0;  // intercept unpenalized
    } else {
      const Submodel which = j < na ? Submodel::incidence : Submodel::latency;
      const int idx = j < na ? j : j - na;
      const double d = penalty_derivative(spec, omega[j], which, idx);
      psi[c] = d / std::abs(omega[j]);
    }
  }

  // Sigma* on the kept fixed-effect coordinates (for the A Sigma* A term).
  Eigen::MatrixXd unit = Eigen::MatrixXd::Zero(info.dim(), nk);
  for (int c = 0; c < nk; ++c) unit(kept[c], c) = 1.0;
  const Eigen::MatrixXd sstar_k = info.solve(unit);  // dim x nk

  // mid = Sigma + 2A + A Sigma* A restricted to the reduced system.
  Eigen::MatrixXd mid(ns, ns);
  for (int c = 0; c < ns; ++c)
    for (int r = 0; r < ns; ++r) mid(r, c) = info.sigma(sel[r], sel[c]);
  for (int c = 0; c < nk; ++c) {
    mid(c, c) += 2.0 * avec[c];
    for (int r = 0; r < nk; ++r)
      mid(r, c) += avec[r] * avec[c] * sstar_k(kept[r], c);
  }

  // B = Sigma + n*Psi on the reduced system (Psi is zero on u).
  Eigen::MatrixXd b(ns, ns);
  for (int c = 0; c < ns; ++c)
    for (int r = 0; r < ns; ++r) b(r, c) = info.sigma(sel[r], sel[c]);
  for (int c = 0; c < nk; ++c) b(c, c) += n * psi[c];

  SandwichCov out;
  Eigen::LLT<Eigen::MatrixXd> llt(b);
  if (llt.info() != Eigen::Success) {
    for (double r = 1e-8; r < 1.5e-2; r *= 10.0) {
      Eigen::MatrixXd br = b;
      br.diagonal().array() += r;
      llt.compute(br);
      if (llt.info() == Eigen::Success) {
        out.ridge_bumped = true;
        break;
      }
    }
    if (llt.info() != Eigen::Success)
      throw FactorizationError("sandwich outer factor", 0);
  }
  const Eigen::MatrixXd covsel = llt.solve(llt.solve(mid).transpose());

  out.cov_fixed = Eigen::MatrixXd::Zero(nf, nf);
  out.ase = Eigen::VectorXd::Zero(nf);
  for (int c = 0; c < nk; ++c) {
    for (int r = 0; r < nk; ++r) out.cov_fixed(kept[r], kept[c]) = covsel(r, c);
    out.ase[kept[c]] = std::sqrt(std::max(0.0, covsel(c, c)));
  }
  return out;
}

PenalizedFit fit_penalized(const OrderedView& view, const UnpenalizedFit& base,
                           PenaltyKind kind, const SelectionOptions& sopts) {
  PenalizedFit out;
  out.base = base;
  out.spec.kind = kind;
  out.spec.scad_a = sopts.scad_a;
  out.spec.weight_floor = sopts.weight_floor;
  if (kind == PenaltyKind::alasso) {
    auto [w1, w2] = alasso_weights(base.params.alpha, base.params.beta,
                                   sopts.weight_floor);
    out.spec.weights_alpha = std::move(w1);
    out.spec.weights_beta = std::move(w2);
  }

  const int nf = static_cast<int>(base.params.alpha.size() +
                                  base.params.beta.size());
  if (kind == PenaltyKind::none) {
    SelectionResult& sel = out.sel;
    sel.alpha_hat = base.params.alpha;
    sel.beta_hat = base.params.beta;
    sel.v = nf;
    sel.bic = std::log(double(view.n)) * nf / view.n;
    // Plain inverse-information standard errors.
    Eigen::MatrixXd unit = Eigen::MatrixXd::Zero(base.info.dim(), nf);
    for (int j = 0; j < nf; ++j) unit(j, j) = 1.0;
    const Eigen::MatrixXd sstar = base.info.solve(unit);
    sel.cov_fixed = sstar.topRows(nf);
    sel.ase = sel.cov_fixed.diagonal().array().max(0.0).sqrt();
    return out;
  }

  LsaProblem problem = make_lsa_problem(base, out.spec, view.n);
  KappaGrid grid;
  if (sopts.fixed_kappa) {
    grid.kappa1_values = {sopts.kappa1};
    grid.kappa2_values = {sopts.kappa2};
  } else {
    grid = make_kappa_grid(problem, sopts.grid_size);
  }
  out.sel = grid_search_kappa(problem, grid);
  out.spec.kappa1 = out.sel.kappa1;
  out.spec.kappa2 = out.sel.kappa2;

  const SandwichCov sw = sandwich_cov(out.sel.alpha_hat, out.sel.beta_hat,
                                      base.info, out.spec, view.n);
  out.sel.cov_fixed = sw.cov_fixed;
  out.sel.ase = sw.ase;
  out.sel.cov_ridge_bumped = sw.ridge_bumped;
  return out;
}

PenalizedFit fit_penalized(const RecurrentDataset& data, Frailty structure,
                           PenaltyKind kind, const FitOptions& opts,
                           const SelectionOptions& sopts) {
  const OrderedView view = order_records(data);
  const UnpenalizedFit base = fit_unpenalized(view, structure, opts);
  return fit_penalized(view, base, kind, sopts);
}

}  // namespace fmcure
