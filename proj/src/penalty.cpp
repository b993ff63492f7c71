#include "fmcure/penalty.hpp"

#include <cmath>

namespace fmcure {

double PenaltySpec::weight(Submodel which, int index) const {
  if (kind != PenaltyKind::alasso) return 1.0;
  if (which == Submodel::incidence) {
    if (index <= 0 || index > weights_alpha.size())
      throw ConfigError("penalty weight index out of range (incidence)");
    return weights_alpha[index - 1];
  }
  if (index < 0 || index >= weights_beta.size())
    throw ConfigError("penalty weight index out of range (latency)");
  return weights_beta[index];
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> alasso_weights(
    const Eigen::VectorXd& alpha_tilde, const Eigen::VectorXd& beta_tilde,
    double eps) {
  const Eigen::Index d = alpha_tilde.size() - 1;  // intercept excluded
  Eigen::VectorXd w1(d), w2(beta_tilde.size());
  for (Eigen::Index j = 0; j < d; ++j)
    w1[j] = 1.0 / std::max(std::abs(alpha_tilde[j + 1]), eps);
  for (Eigen::Index j = 0; j < beta_tilde.size(); ++j)
    w2[j] = 1.0 / std::max(std::abs(beta_tilde[j]), eps);
  return {std::move(w1), std::move(w2)};
}

double penalty_value_at(PenaltyKind kind, double kappa, double scad_a,
                        double weight, double coef) {
  if (kind == PenaltyKind::none || kappa == 0.0) return 0.0;
  const double x = std::abs(coef);
  if (kind == PenaltyKind::alasso) return kappa * weight * x;
  // SCAD: linear to kappa, quadratic clip to a*kappa, then flat.
  const double a = scad_a;
  if (x <= kappa) return kappa * x;
  if (x <= a * kappa) {
    const double r = x - a * kappa;
    return ((a * a - 1.0) * kappa * kappa - r * r) / (2.0 * (a - 1.0));
  }
  return (a + 1.0) * kappa * kappa / 2.0;
}

double penalty_derivative_at(PenaltyKind kind, double kappa, double scad_a,
                             double weight, double coef) {
  if (kind == PenaltyKind::none || kappa == 0.0) return 0.0;
  const double x = std::abs(coef);
  if (kind == PenaltyKind::alasso) return kappa * weight;
  const double a = scad_a;
  if (x <= kappa) return kappa;
  if (x <= a * kappa) return (a * kappa - x) / (a - 1.0);
  return 0.0;
}

double penalty_value(const PenaltySpec& spec, double coef, Submodel which,
                     int index) {
  return penalty_value_at(spec.kind, spec.kappa(which), spec.scad_a,
                          spec.weight(which, index), coef);
}

double penalty_derivative(const PenaltySpec& spec, double coef, Submodel which,
                          int index) {
  return penalty_derivative_at(spec.kind, spec.kappa(which), spec.scad_a,
                               spec.weight(which, index), coef);
}

Eigen::VectorXd lqa_diag(const PenaltySpec& spec,
                         const Eigen::VectorXd& current_coefs, Submodel which,
                         double eps_lqa) {
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(current_coefs.size());
  const int first = which == Submodel::incidence ? 1 : 0;  // skip intercept
  for (int j = first; j < current_coefs.size(); ++j) {
    const double d = penalty_derivative(spec, current_coefs[j], which, j);
    psi[j] = d / std::max(std::abs(current_coefs[j]), eps_lqa);
  }
  return psi;
}

}  // namespace fmcure
