// Unpenalized EM fit: E-step posterior cure weights, Breslow baseline with
// exponential tail completion, Newton M-step, and REML/ML variance updates.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "fmcure/dataset.hpp"
#include "fmcure/likelihood.hpp"
#include "fmcure/types.hpp"

namespace fmcure {

// Breslow baseline survival with exponential tail beyond the largest
// uncensored time t_h: S(t) = exp(-psi_hat*t) there, continuous at t_h.
struct BaselineSurvival {
  std::vector<double> knots;    // unique uncensored gap times, ascending
  std::vector<double> cumhaz;   // cumulative hazard at knots
  std::vector<double> values;   // survival exp(-cumhaz) at knots
  double t_h = 0;
  double psi_hat = 0;

  double cumulative_hazard(double t) const;
  double operator()(double t) const;  // survival at t
};

BaselineSurvival baseline_breslow_etail(const OrderedView& view,
                                        const Eigen::VectorXd& g,
                                        const Eigen::VectorXd& eta);

// Posterior uncured weights g_r; clamp_count is incremented when the
// denominator underflows to zero (pi ~ 1 together with S^{exp(eta)} ~ 0).
Eigen::VectorXd e_step(const OrderedView& view, const LinearPredictors& lp,
                       const BaselineSurvival& baseline, int* clamp_count);

struct NewtonReport {
  int iterations = 0;
  int halvings = 0;
  double ridge = 0;       // largest ridge needed by the factorization ladder
  double final_loglik = 0;
  bool converged = false;
};

// Maximize the BLUP log-likelihood over (alpha, beta, u) at fixed g and
// variance components. Steps solve via Cholesky with a ridge ladder
// (1e-8 escalating x10 to 1e-2) and halve on log-likelihood decrease.
// Returns the information matrix at the accepted parameters (factorized).
InfoMatrix newton_mstep(const OrderedView& view, ModelParams& params,
                        const Eigen::VectorXd& g, const FitOptions& opts,
                        NewtonReport* report);

double reml_theta_constant(const InfoMatrix& info, const Eigen::VectorXd& u,
                           double theta_floor);
double ml_theta_constant(const InfoMatrix& info, const Eigen::VectorXd& u,
                         double theta_floor);

// Traces of I, J, K against M = Sigma*_{uu} + uu' used by the AR(1) variance
// and correlation updates. b1 = tr(M); b2 sums one entry per within-block
// adjacent pair (half of tr(J M), the variance update carries the factor 2);
// b3 = tr(K M) with K marking block corners, doubled for singleton blocks.
struct Ar1Traces {
  double b1 = 0, b2 = 0, b3 = 0;
};

Ar1Traces ar1_traces(const InfoMatrix& info, const Eigen::VectorXd& u,
                     const std::vector<int>& n_per_subject, Variance variance);

double reml_theta_ar1(const Ar1Traces& tr, double rho, int n,
                      double theta_floor);

struct RhoUpdate {
  double rho = 0;
  bool kept_current = false;  // no admissible root; previous value retained
};

// Root of the cubic estimating equation for rho, Newton from rho_current
// with a scan/bisection fallback; among multiple roots in (-1,1) the one
// maximizing the profiled random-effect likelihood is chosen.
RhoUpdate update_rho_ar1(const Ar1Traces& tr, int n, int m, double rho_current,
                         const Eigen::VectorXd& u,
                         const std::vector<int>& n_per_subject,
                         double theta_floor);

struct EmIterRecord {
  int iter = 0;
  double loglik = 0;
  double theta = 0;
  double rho = 0;
  double max_delta = 0;
};

struct EmDiagnostics {
  std::vector<EmIterRecord> trace;
  int g_clamps = 0;
  int ascent_violations = 0;  // loglik decreases beyond 1e-8 between iterations
  int newton_total_iterations = 0;
  double final_score_norm = 0;
  double final_ridge = 0;
};

struct UnpenalizedFit {
  ModelParams params;
  Eigen::VectorXd g;
  BaselineSurvival baseline;
  InfoMatrix info;  // at the final parameters, factorized
  double loglik = 0;
  bool converged = false;
  int iterations = 0;
  EmDiagnostics diag;
};

UnpenalizedFit fit_unpenalized(const RecurrentDataset& data, Frailty structure,
                               const FitOptions& opts);
UnpenalizedFit fit_unpenalized(const OrderedView& view, Frailty structure,
                               const FitOptions& opts);

// Same fit with the ML variance update in place of REML.
UnpenalizedFit fit_unpenalized_ml(const RecurrentDataset& data,
                                  Frailty structure, const FitOptions& opts);

}  // namespace fmcure
