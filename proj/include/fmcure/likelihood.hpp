// BLUP log-likelihood, analytic score, and block information matrix
// (negative Hessian) with Cholesky-based solves.
#pragma once

#include <Eigen/Dense>

#include "fmcure/dataset.hpp"
#include "fmcure/types.hpp"

namespace fmcure {

struct ModelParams {
  Eigen::VectorXd alpha;  // (d+1), intercept first
  Eigen::VectorXd beta;   // (p)
  Eigen::VectorXd u;      // m (constant frailty) or n (AR(1))
  double theta = 0.5;
  double rho = 0.0;  // AR(1) only
  Frailty structure = Frailty::constant;

  int packed_dim() const {
    return static_cast<int>(alpha.size() + beta.size() + u.size());
  }
};

// Zero-initialized parameters of the right dimensions.
ModelParams make_params(const OrderedView& view, Frailty structure);

struct LinearPredictors {
  Eigen::VectorXd xi;   // W*alpha + R*u
  Eigen::VectorXd eta;  // Z*beta + R*u
};

LinearPredictors linear_predictors(const ModelParams& params,
                                   const OrderedView& view);

// Per-record latency quantities shared by the score, information matrix, and
// Breslow baseline: varpi_b = g_b*exp(eta_b), per-event weights
// e_b = delta_b / sum_{l in R(b)} varpi_l, and the cumulative sums
// s_r = sum of e over events with time <= t_(r) (cum2 likewise with e^2).
struct LatencyWorkspace {
  Eigen::VectorXd varpi;
  Eigen::VectorXd e;
  Eigen::VectorXd s;
  Eigen::VectorXd cum2;
  Eigen::VectorXd denom;  // risk-set denominator at each position's group
};

// Throws DegenerateError if an event's weighted risk set sums to zero.
LatencyWorkspace latency_workspace(const OrderedView& view,
                                   const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& eta);

// AR(1) helpers for G(rho) with unit lag-1 blocks G_i = (rho^|j-k|)/(1-rho^2).
// G_i^{-1} = (1+rho^2) I - rho J - rho^2 K with J the first off-diagonal band
// and K marking block corners (K = [2] for a singleton block).
double ar1_logdet(double rho, int n_subjects);
Eigen::MatrixXd ar1_precision_dense(double rho,
                                    const std::vector<int>& n_per_subject);
Eigen::VectorXd ar1_precision_apply(double rho,
                                    const std::vector<int>& n_per_subject,
                                    const Eigen::VectorXd& v);

// BLUP log-likelihood: incidence Bernoulli terms + weighted Cox
// partial-likelihood terms + the normal random-effect penalty l2.
// Requires g in [0,1] with g_r = 1 wherever delta_r = 1.
double blup_loglik(const ModelParams& params, const OrderedView& view,
                   const Eigen::VectorXd& g);

// Packed gradient over (alpha, beta, u).
Eigen::VectorXd score(const ModelParams& params, const OrderedView& view,
                      const Eigen::VectorXd& g);

// Negative Hessian with block layout [alpha | beta | u] (u last, so the
// trailing Cholesky block gives the Schur complement of the fixed effects).
class InfoMatrix {
 public:
  Eigen::MatrixXd sigma;
  int na = 0, nb = 0, nu = 0;

  int dim() const { return na + nb + nu; }
  auto zeta_aa() const { return sigma.block(0, 0, na, na); }
  auto zeta_bb() const { return sigma.block(na, na, nb, nb); }
  auto zeta_uu() const { return sigma.block(na + nb, na + nb, nu, nu); }

  // Factorize sigma + ridge*I. Throws FactorizationError (with the 1-based
  // leading-minor index) when not positive definite.
  void factorize(double ridge = 0.0);
  bool try_factorize(double ridge);
  bool factorized() const { return factorized_; }
  double ridge() const { return ridge_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

  // tr of the (u,u) block of sigma^{-1}, via the trailing Cholesky block.
  double trace_inverse_uu() const;
  // Full (u,u) block of sigma^{-1}.
  Eigen::MatrixXd inverse_block_uu() const;

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool factorized_ = false;
  double ridge_ = 0.0;
};

// Assemble (but do not factorize) the information matrix at the given point.
InfoMatrix info_matrix(const ModelParams& params, const OrderedView& view,
                       const Eigen::VectorXd& g);

// Convenience: factorize if needed, then solve.
Eigen::VectorXd chol_solve(InfoMatrix& info, const Eigen::VectorXd& rhs);

}  // namespace fmcure
