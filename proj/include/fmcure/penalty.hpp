// Penalty functions (adaptive lasso, SCAD), derivatives, data-dependent
// weights, and local quadratic approximation coefficients.
#pragma once

#include <Eigen/Dense>
#include <utility>

#include "fmcure/types.hpp"

namespace fmcure {

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::none;
  double kappa1 = 0;   // incidence tuning parameter
  double kappa2 = 0;   // latency tuning parameter
  double scad_a = 3.7;
  Eigen::VectorXd weights_alpha;  // adaptive-lasso weights, d penalized coords
  Eigen::VectorXd weights_beta;   // p penalized coords
  double weight_floor = 1e-8;

  double kappa(Submodel which) const {
    return which == Submodel::incidence ? kappa1 : kappa2;
  }
  // Weight for block coordinate `index` (incidence: 0 is the unpenalized
  // intercept, 1..d map to weights_alpha; latency: 0..p-1 map to
  // weights_beta). SCAD and `none` ignore weights.
  double weight(Submodel which, int index) const;
};

// w1_j = 1/max(|alpha_tilde_j|, eps) over the d non-intercept coordinates,
// w2_j likewise over beta_tilde.
std::pair<Eigen::VectorXd, Eigen::VectorXd> alasso_weights(
    const Eigen::VectorXd& alpha_tilde, const Eigen::VectorXd& beta_tilde,
    double eps = 1e-8);

// Penalty at a single coefficient with explicit tuning parameter; `weight`
// applies to the adaptive lasso only.
double penalty_value_at(PenaltyKind kind, double kappa, double scad_a,
                        double weight, double coef);
// d/d|coef|; right-derivative at 0.
double penalty_derivative_at(PenaltyKind kind, double kappa, double scad_a,
                             double weight, double coef);

// Spec-level wrappers resolving kappa and weight by block and index.
// The incidence intercept (index 0) must not be passed.
double penalty_value(const PenaltySpec& spec, double coef, Submodel which,
                     int index);
double penalty_derivative(const PenaltySpec& spec, double coef, Submodel which,
                          int index);

// LQA coefficients psi_j = phi'(|omega_j|)/max(|omega_j|, eps_lqa) for the
// penalized coordinates of a block; 0 at the incidence intercept. Entries at
// coefficients that are exactly 0 are computed with the floor but are not
// meaningful (such coordinates are removed from LQA iterations).
Eigen::VectorXd lqa_diag(const PenaltySpec& spec,
                         const Eigen::VectorXd& current_coefs, Submodel which,
                         double eps_lqa = 1e-8);

}  // namespace fmcure
