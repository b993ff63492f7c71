#include "fmcure/likelihood.hpp"

#include <cmath>
#include <limits>

namespace fmcure {

namespace {

// log(1 + e^x) without overflow.
double log1pexp(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_dims(const ModelParams& params, const OrderedView& view) {
  if (params.alpha.size() != view.d + 1 || params.beta.size() != view.p ||
      params.u.size() != view.u_dim(params.structure))
    throw Error("parameter dimensions do not match the data view");
}

// Scatter ordered-record values into u slots: out[slot(r)] += v[r].
Eigen::VectorXd scatter_to_u(const ModelParams& params, const OrderedView& view,
                             const Eigen::VectorXd& v) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(params.u.size());
  for (int r = 0; r < view.n; ++r)
    out[view.u_slot(r, params.structure)] += v[r];
  return out;
}

}  // namespace

ModelParams make_params(const OrderedView& view, Frailty structure) {
  ModelParams params;
  params.structure = structure;
  params.alpha = Eigen::VectorXd::Zero(view.d + 1);
  params.beta = Eigen::VectorXd::Zero(view.p);
  params.u = Eigen::VectorXd::Zero(view.u_dim(structure));
  return params;
}

LinearPredictors linear_predictors(const ModelParams& params,
                                   const OrderedView& view) {
  check_dims(params, view);
  LinearPredictors lp;
  lp.xi = view.W * params.alpha;
  lp.eta = view.p > 0 ? Eigen::VectorXd(view.Z * params.beta)
                      : Eigen::VectorXd(Eigen::VectorXd::Zero(view.n));
  for (int r = 0; r < view.n; ++r) {
    double ur = params.u[view.u_slot(r, params.structure)];
    lp.xi[r] += ur;
    lp.eta[r] += ur;
  }
  return lp;
}

LatencyWorkspace latency_workspace(const OrderedView& view,
                                   const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& eta) {
  LatencyWorkspace ws;
  // Scalar std::exp (not Eigen's vectorized exp) so downstream quantities are
  // bitwise-reproducible against straightforward transcriptions.
  ws.varpi.resize(view.n);
  for (int r = 0; r < view.n; ++r) ws.varpi[r] = g[r] * std::exp(eta[r]);
  ws.denom.resize(view.n);
  ws.e = Eigen::VectorXd::Zero(view.n);
  ws.s.resize(view.n);
  ws.cum2.resize(view.n);

  // Suffix sums of varpi over tie groups: denom at a group includes the
  // whole group (risk sets use >=).
  double running = 0;
  for (int gid = view.groups() - 1; gid >= 0; --gid) {
    for (int r = view.group_start[gid]; r < view.group_end(gid); ++r)
      running += ws.varpi[r];
    for (int r = view.group_start[gid]; r < view.group_end(gid); ++r)
      ws.denom[r] = running;
  }
  for (int r : view.event_pos) {
    if (!(ws.denom[r] > 0))
      throw DegenerateError(
          "weighted risk set is empty at an observed event (all posterior "
          "weights zero)");
    ws.e[r] = 1.0 / ws.denom[r];
  }
  // Cumulative event sums over groups with time <= t_(r) (tie-inclusive).
  double ps = 0, ps2 = 0;
  for (int gid = 0; gid < view.groups(); ++gid) {
    for (int r = view.group_start[gid]; r < view.group_end(gid); ++r) {
      ps += ws.e[r];
      ps2 += ws.e[r] * ws.e[r];
    }
    for (int r = view.group_start[gid]; r < view.group_end(gid); ++r) {
      ws.s[r] = ps;
      ws.cum2[r] = ps2;
    }
  }
  return ws;
}

double ar1_logdet(double rho, int n_subjects) {
  // |G_i| = 1/(1-rho^2) for every block size.
  return -n_subjects * std::log1p(-rho * rho);
}

Eigen::MatrixXd ar1_precision_dense(double rho,
                                    const std::vector<int>& n_per_subject) {
  int n = 0;
  for (int ni : n_per_subject) n += ni;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  int off = 0;
  for (int ni : n_per_subject) {
    if (ni == 1) {
      out(off, off) = 1.0 - rho * rho;
    } else {
      for (int j = 0; j < ni; ++j) {
        bool corner = (j == 0 || j == ni - 1);
        out(off + j, off + j) = corner ? 1.0 : 1.0 + rho * rho;
        if (j + 1 < ni) {
          out(off + j, off + j + 1) = -rho;
          out(off + j + 1, off + j) = -rho;
        }
      }
    }
    off += ni;
  }
  return out;
}

Eigen::VectorXd ar1_precision_apply(double rho,
                                    const std::vector<int>& n_per_subject,
                                    const Eigen::VectorXd& v) {
  Eigen::VectorXd out(v.size());
  int off = 0;
  for (int ni : n_per_subject) {
    if (ni == 1) {
      out[off] = (1.0 - rho * rho) * v[off];
    } else {
      for (int j = 0; j < ni; ++j) {
        bool corner = (j == 0 || j == ni - 1);
        double acc = (corner ? 1.0 : 1.0 + rho * rho) * v[off + j];
        if (j > 0) acc -= rho * v[off + j - 1];
        if (j + 1 < ni) acc -= rho * v[off + j + 1];
        out[off + j] = acc;
      }
    }
    off += ni;
  }
  return out;
}

double blup_loglik(const ModelParams& params, const OrderedView& view,
                   const Eigen::VectorXd& g) {
  check_dims(params, view);
  LinearPredictors lp = linear_predictors(params, view);

  // Incidence Bernoulli terms.
  double l1 = 0;
  for (int r = 0; r < view.n; ++r) l1 += g[r] * lp.xi[r] - log1pexp(lp.xi[r]);

  // Weighted Cox terms via a tail-to-head streaming log-sum-exp of
  // g_l * exp(eta_l) over the suffix risk sets.
  double lse_max = -std::numeric_limits<double>::infinity();
  double lse_sum = 0;  // sum of g_l * exp(eta_l - lse_max)
  for (int gid = view.groups() - 1; gid >= 0; --gid) {
    for (int r = view.group_start[gid]; r < view.group_end(gid); ++r) {
      if (g[r] <= 0) continue;
      if (lp.eta[r] <= lse_max) {
        lse_sum += g[r] * std::exp(lp.eta[r] - lse_max);
      } else {
        lse_sum = lse_sum * std::exp(lse_max - lp.eta[r]) + g[r];
        lse_max = lp.eta[r];
      }
    }
    for (int r = view.group_start[gid]; r < view.group_end(gid); ++r) {
      if (view.delta[r] != 1) continue;
      if (!(lse_sum > 0) || !std::isfinite(lse_max))
        throw DegenerateError(
            "weighted risk set is empty at an observed event (all posterior "
            "weights zero)");
      l1 += lp.eta[r] - (lse_max + std::log(lse_sum));
    }
  }

  // Normal random-effect penalty.
  constexpr double log2pi = 1.8378770664093453;
  double l2;
  if (params.structure == Frailty::constant) {
    const double m = static_cast<double>(params.u.size());
    l2 = -0.5 * (m * (log2pi + std::log(params.theta)) +
                 params.u.squaredNorm() / params.theta);
  } else {
    const double n = static_cast<double>(params.u.size());
    double quad = params.u.dot(
        ar1_precision_apply(params.rho, view.n_per_subject, params.u));
    l2 = -0.5 * (n * (log2pi + std::log(params.theta)) +
                 ar1_logdet(params.rho, view.m) + quad / params.theta);
  }
  return l1 + l2;
}

Eigen::VectorXd score(const ModelParams& params, const OrderedView& view,
                      const Eigen::VectorXd& g) {
  check_dims(params, view);
  LinearPredictors lp = linear_predictors(params, view);
  LatencyWorkspace ws = latency_workspace(view, g, lp.eta);

  Eigen::VectorXd dxi(view.n), deta(view.n);
  for (int r = 0; r < view.n; ++r) {
    dxi[r] = g[r] - sigmoid(lp.xi[r]);
    deta[r] = view.delta[r] - ws.varpi[r] * ws.s[r];
  }

  const int na = view.d + 1;
  const int nb = view.p;
  Eigen::VectorXd out(params.packed_dim());
  out.head(na) = view.W.transpose() * dxi;
  if (nb > 0) out.segment(na, nb) = view.Z.transpose() * deta;
  Eigen::VectorXd gu = scatter_to_u(params, view, dxi + deta);
  if (params.structure == Frailty::constant) {
    gu -= params.u / params.theta;
  } else {
    gu -= ar1_precision_apply(params.rho, view.n_per_subject, params.u) /
          params.theta;
  }
  out.tail(params.u.size()) = gu;
  return out;
}

void InfoMatrix::factorize(double ridge) {
  if (!try_factorize(ridge)) {
    // Locate the first non-positive pivot for the diagnostic (failure path
    // only, plain O(dim^3/3) Cholesky).
    Eigen::MatrixXd a = sigma;
    if (ridge > 0) a.diagonal().array() += ridge;
    const int nn = dim();
    int minor = nn;
    for (int k = 0; k < nn; ++k) {
      double piv = a(k, k);
      if (!(piv > 0) || !std::isfinite(piv)) {
        minor = k + 1;
        break;
      }
      double root = std::sqrt(piv);
      a.col(k).tail(nn - k - 1) /= root;
      for (int j = k + 1; j < nn; ++j)
        a.col(j).tail(nn - j) -= a(j, k) * a.col(k).tail(nn - j);
    }
    throw FactorizationError(
        "information matrix is not positive definite (leading minor " +
            std::to_string(minor) + ")",
        minor);
  }
}

bool InfoMatrix::try_factorize(double ridge) {
  Eigen::MatrixXd a = sigma;
  if (ridge > 0) a.diagonal().array() += ridge;
  llt_.compute(a);
  factorized_ = llt_.info() == Eigen::Success;
  ridge_ = ridge;
  return factorized_;
}

Eigen::VectorXd InfoMatrix::solve(const Eigen::VectorXd& rhs) const {
  if (!factorized_) throw Error("InfoMatrix::solve called before factorize");
  return llt_.solve(rhs);
}

Eigen::MatrixXd InfoMatrix::solve(const Eigen::MatrixXd& rhs) const {
  if (!factorized_) throw Error("InfoMatrix::solve called before factorize");
  return llt_.solve(rhs);
}

double InfoMatrix::trace_inverse_uu() const {
  if (!factorized_) throw Error("InfoMatrix: factorize before trace_inverse_uu");
  // Trailing Cholesky block L22 satisfies L22*L22' = Schur complement of the
  // fixed-effect block, so (sigma^{-1})_{uu} = L22^{-T} L22^{-1}.
  Eigen::MatrixXd l22 = llt_.matrixLLT().bottomRightCorner(nu, nu);
  Eigen::MatrixXd inv = l22.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(nu, nu));
  return inv.squaredNorm();
}

Eigen::MatrixXd InfoMatrix::inverse_block_uu() const {
  if (!factorized_) throw Error("InfoMatrix: factorize before inverse_block_uu");
  Eigen::MatrixXd l22 = llt_.matrixLLT().bottomRightCorner(nu, nu);
  Eigen::MatrixXd inv = l22.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(nu, nu));
  return inv.transpose() * inv;
}

InfoMatrix info_matrix(const ModelParams& params, const OrderedView& view,
                       const Eigen::VectorXd& g) {
  check_dims(params, view);
  LinearPredictors lp = linear_predictors(params, view);
  LatencyWorkspace ws = latency_workspace(view, g, lp.eta);

  const int na = view.d + 1;
  const int nb = view.p;
  const int nu = view.u_dim(params.structure);
  InfoMatrix info;
  info.na = na;
  info.nb = nb;
  info.nu = nu;
  info.sigma.setZero(na + nb + nu, na + nb + nu);

  // Bernoulli curvature and the Breslow diagonal weight.
  Eigen::VectorXd gxi(view.n), qs(view.n);
  for (int r = 0; r < view.n; ++r) {
    double p = sigmoid(lp.xi[r]);
    gxi[r] = p * (1.0 - p);
    qs[r] = ws.varpi[r] * ws.s[r];
  }

  // (alpha, alpha) = W' Gamma_xixi W.
  info.sigma.topLeftCorner(na, na) =
      view.W.transpose() * gxi.asDiagonal() * view.W;

  // (beta, beta) = Z' (QS) Z - sum over tie groups of (group e^2 mass) zs zs'
  // where zs is the varpi-weighted suffix sum of z over the risk set.
  if (nb > 0) {
    Eigen::MatrixXd bb = view.Z.transpose() * qs.asDiagonal() * view.Z;
    Eigen::VectorXd zs = Eigen::VectorXd::Zero(nb);
    for (int gid = view.groups() - 1; gid >= 0; --gid) {
      double e2 = 0;
      for (int r = view.group_start[gid]; r < view.group_end(gid); ++r) {
        zs += ws.varpi[r] * view.Z.row(r).transpose();
        e2 += ws.e[r] * ws.e[r];
      }
      if (e2 > 0) bb.noalias() -= e2 * zs * zs.transpose();
    }
    info.sigma.block(na, na, nb, nb) = bb;
  }

  // Per-group prefix/suffix vectors for the (beta,u) cross block:
  // col_slot += varpi_b * (s_b z_b - P1(group b) - cum2_b * P2(group b)),
  // P1 = prefix of varpi*cum2*z through the group, P2 = suffix of varpi*z
  // strictly after the group.
  const int ngroups = view.groups();
  Eigen::MatrixXd p1g, p2g;
  if (nb > 0) {
    p1g.setZero(nb, ngroups);
    p2g.setZero(nb, ngroups);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(nb);
    for (int gid = 0; gid < ngroups; ++gid) {
      for (int r = view.group_start[gid]; r < view.group_end(gid); ++r)
        acc += ws.varpi[r] * ws.cum2[r] * view.Z.row(r).transpose();
      p1g.col(gid) = acc;
    }
    acc.setZero();
    for (int gid = ngroups - 1; gid >= 0; --gid) {
      p2g.col(gid) = acc;
      for (int r = view.group_start[gid]; r < view.group_end(gid); ++r)
        acc += ws.varpi[r] * view.Z.row(r).transpose();
    }
  }

  auto au_block = info.sigma.block(0, na + nb, na, nu);
  auto bu_block = info.sigma.block(na, na + nb, nb, nu);
  for (int r = 0; r < view.n; ++r) {
    int slot = view.u_slot(r, params.structure);
    au_block.col(slot) += gxi[r] * view.W.row(r).transpose();
    if (nb > 0) {
      int gid = view.group_of[r];
      bu_block.col(slot) +=
          ws.varpi[r] * (ws.s[r] * view.Z.row(r).transpose() - p1g.col(gid) -
                         ws.cum2[r] * p2g.col(gid));
    }
  }
  info.sigma.block(na + nb, 0, nu, na) = au_block.transpose();
  info.sigma.block(na + nb, na, nu, nb) = bu_block.transpose();

  // (u,u): diagonal scatter of Gamma_xixi + QS, minus the Breslow correction
  // sum over record pairs of varpi_b varpi_l cum2_min; cum2 is nondecreasing
  // along the order, so min = value at the earlier position.
  auto uu = info.sigma.block(na + nb, na + nb, nu, nu);
  if (params.structure == Frailty::constant) {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(nu);
    for (int r = 0; r < view.n; ++r) diag[view.subj[r]] += gxi[r] + qs[r];
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(nu, nu);
    Eigen::VectorXd samepos = Eigen::VectorXd::Zero(nu);
    const double* w = ws.varpi.data();
    for (int b = 0; b < view.n; ++b) {
      double cb = ws.varpi[b] * ws.cum2[b];
      if (cb == 0) continue;
      int ib = view.subj[b];
      double* col = acc.col(ib).data();
      const int* sj = view.subj.data();
      for (int l = b; l < view.n; ++l) col[sj[l]] += cb * w[l];
      samepos[ib] += cb * ws.varpi[b];
    }
    uu = acc + acc.transpose();
    uu.diagonal() -= samepos;
    uu *= -1.0;
    uu.diagonal() += diag;
    uu.diagonal().array() += 1.0 / params.theta;
  } else {
    // Record-level u: dense Gamma_etaeta scattered through the slot
    // permutation, plus theta^{-1} G^{-1}.
    Eigen::MatrixXd guu = Eigen::MatrixXd::Zero(nu, nu);
    for (int b = 0; b < view.n; ++b) {
      int sb = view.ar1_slot[b];
      guu(sb, sb) += gxi[b] + qs[b];
      double cb = ws.varpi[b] * ws.cum2[b];
      if (cb == 0) continue;
      for (int l = b; l < view.n; ++l) {
        int sl = view.ar1_slot[l];
        double v = cb * ws.varpi[l];
        guu(sb, sl) -= v;
        if (l != b) guu(sl, sb) -= v;
      }
    }
    uu = guu + ar1_precision_dense(params.rho, view.n_per_subject) /
                   params.theta;
  }
  return info;
}

Eigen::VectorXd chol_solve(InfoMatrix& info, const Eigen::VectorXd& rhs) {
  if (!info.factorized()) info.factorize();
  return info.solve(rhs);
}

}  // namespace fmcure
