// Monte Carlo study harness: correlated-covariate generator, cure-fraction
// recurrent-event sampler, oracle (true-support) fit, selection metrics, and
// a reproducible multi-replication study runner.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fmcure/selection.hpp"

namespace fmcure {

struct SimConfig {
  int m = 200;                 // subjects
  int ni_min = 1, ni_max = 5;  // records per subject, uniform
  double follow_up = 2000.0;   // censoring window (days)
  int d = 8;                   // shared covariates
  double pairwise_corr = 0.5;
  Eigen::VectorXd alpha_true;  // d+1 with intercept
  Eigen::VectorXd beta_true;   // d
  double weibull_mu = 0.8;     // cumulative baseline hazard mu * t^tau
  double weibull_tau = 0.3;
  int censoring_label = 25;    // 25 -> (0.8, 0.3), 40 -> (0.02, 0.8)
  double theta_true = 0.5;
  double rho_true = 0.0;
  Frailty structure = Frailty::constant;
  int replications = 100;
  std::uint64_t seed = 0;

  static SimConfig defaults();
  void set_censoring(int label);
};

// Per-record latent state kept alongside a generated dataset.
struct LatentTruth {
  std::vector<int> y;        // 1 = uncured
  std::vector<double> a;     // latent event time (+inf when cured)
  std::vector<double> c;     // censoring draw
  std::vector<double> u;     // frailty per subject (constant) or record (AR(1))
};

std::uint64_t splitmix64(std::uint64_t x);
// Independent deterministic stream for one replication.
std::mt19937_64 replication_rng(std::uint64_t seed, int replication);

// m rows from N(0, Phi), Phi the equicorrelation matrix with off-diagonal phi.
Eigen::MatrixXd gen_covariates(int m, int d, double phi, std::mt19937_64& rng);

std::pair<RecurrentDataset, LatentTruth> gen_dataset(const SimConfig& cfg,
                                                     std::mt19937_64& rng);

// Unpenalized fit restricted to the true support (incidence x1,x2,x6;
// latency x1,x4,x6 under the default truth).
UnpenalizedFit oracle_fit(const RecurrentDataset& data, Frailty structure,
                          const FitOptions& opts);

// Covariate-column index sets of the default truth's nonzero coefficients.
std::vector<int> oracle_incidence_columns();
std::vector<int> oracle_latency_columns();

struct ReplicationResult {
  bool ok = false;
  std::string error;
  Eigen::VectorXd alpha_hat;  // d+1, exact zeros preserved
  Eigen::VectorXd beta_hat;   // d
  Eigen::VectorXd ase_alpha;  // d+1
  Eigen::VectorXd ase_beta;   // d
  double theta = 0;
  double rho = 0;
};

struct SubmodelMetrics {
  double correct = 0;    // mean true zeros estimated as zero (max 5)
  double incorrect = 0;  // mean true nonzeros estimated as zero (max 3)
  double mse = 0;        // mean (est - true)' Psi (est - true), Psi equicorr
};

struct StudyMetrics {
  SubmodelMetrics incidence, latency;
  Eigen::VectorXd mean_alpha, ase_alpha, ese_alpha;  // d+1
  Eigen::VectorXd mean_beta, ase_beta, ese_beta;     // d
  double mean_theta = 0;
  double mean_rho = 0;
  int n_ok = 0;
  int n_failed = 0;
};

StudyMetrics compute_metrics(const std::vector<ReplicationResult>& fits,
                             const SimConfig& cfg);

// Methods: oracle | none | scad | alasso | scad_ml | alasso_ml (the _ml
// variants substitute the ML variance update in the shared unpenalized fit).
struct StudyReport {
  std::vector<std::string> method_names;
  std::vector<StudyMetrics> metrics;  // parallel to method_names
  std::vector<std::vector<ReplicationResult>> replications;  // [method][rep]
};

StudyReport run_study(const SimConfig& cfg,
                      const std::vector<std::string>& methods, int threads,
                      const FitOptions& fit_opts = {},
                      const SelectionOptions& sel_opts = {});

// table1.csv / table2.csv / bias.csv under out_dir; provenance lines are
// written verbatim as leading '#' comments in each file.
void write_study_reports(const StudyReport& report, const SimConfig& cfg,
                         const std::string& out_dir,
                         const std::vector<std::string>& provenance);

}  // namespace fmcure
