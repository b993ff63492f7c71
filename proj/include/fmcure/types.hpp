// Shared enums, fit options, and the error hierarchy.
#pragma once

#include <stdexcept>
#include <string>

namespace fmcure {

// Random-effect covariance structure: D = theta*I_m (one u per subject) or
// D = theta*G(rho) with record-level u and AR(1) correlation within subject.
enum class Frailty { constant, ar1 };

enum class Variance { reml, ml };

enum class PenaltyKind { none, alasso, scad };

enum class Submodel { incidence, latency };

struct FitOptions {
  int max_em_iter = 200;
  int max_newton_iter = 30;       // Newton iterations per M-step
  double em_tol = 1e-6;           // relative log-likelihood change
  double param_tol = 1e-5;        // max absolute parameter change
  double theta_floor = 1e-6;
  Variance variance = Variance::reml;
  double theta_init = 0.5;
  double rho_init = 0.0;
  bool fix_rho = false;           // hold rho at rho_init (AR(1) only)
  bool verbose = false;           // emit per-iteration trace lines on stderr
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration / usage problems (bad flag values, malformed config file).
struct ConfigError : Error {
  using Error::Error;
};

// Input data violates the contract. Subclasses distinguish the failure mode.
struct DataError : Error {
  using Error::Error;
};
struct SchemaError : DataError {  // missing/unknown column
  using DataError::DataError;
};
struct ParseError : DataError {   // non-numeric cell, bad CSV shape
  using DataError::DataError;
};
struct IntegrityError : DataError {  // duplicate keys, domain violations
  using DataError::DataError;
};

// Cholesky factorization failed: matrix not positive definite.
struct FactorizationError : Error {
  int leading_minor;  // 1-based index of the first non-positive pivot
  FactorizationError(const std::string& msg, int minor)
      : Error(msg), leading_minor(minor) {}
};

// Degenerate likelihood or baseline (e.g. empty weighted risk set at an event).
struct DegenerateError : Error {
  using Error::Error;
};

}  // namespace fmcure
