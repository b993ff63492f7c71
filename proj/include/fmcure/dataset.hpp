// Recurrent-event data: CSV ingestion, per-subject covariates, deterministic
// ordering by gap time, and risk-set construction.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fmcure/types.hpp"

namespace fmcure {

// Column mapping for load_dataset. Covariate columns are referenced by name;
// the incidence and latency lists may overlap partially or completely.
struct Schema {
  std::vector<std::string> incidence_covariates;
  std::vector<std::string> latency_covariates;
  bool standardize = false;  // center/scale covariates (population SD)
};

struct RecordRow {
  int subject_id = 0;
  int event_index = 0;  // 1..n_i within subject
  double gap_time = 0;
  int status = 0;  // 1 = event observed, 0 = censored
};

struct RecurrentDataset {
  std::vector<RecordRow> rows;     // n records, file order
  Eigen::MatrixXd x;               // m x d incidence covariates (per subject)
  Eigen::MatrixXd z;               // m x p latency covariates (per subject)
  std::vector<int> subject_ids;    // m, ascending
  std::vector<int> subject_of_row; // n, index into 0..m-1
  std::vector<std::string> incidence_names;  // d column names
  std::vector<std::string> latency_names;    // p column names

  int m() const { return static_cast<int>(subject_ids.size()); }
  int n() const { return static_cast<int>(rows.size()); }
  int d() const { return static_cast<int>(x.cols()); }
  int p() const { return static_cast<int>(z.cols()); }
};

// Records sorted by ascending gap time (ties broken by subject_id, then
// event_index) with design matrices materialized. Risk sets are suffixes of
// the ordered view: R(r) = positions [risk_begin[r], n).
struct OrderedView {
  int n = 0, m = 0, d = 0, p = 0;
  std::vector<int> perm;        // ordered position -> original row index
  Eigen::MatrixXd W;            // n x (d+1), leading intercept column
  Eigen::MatrixXd Z;            // n x p
  Eigen::VectorXd t;            // sorted gap times
  Eigen::VectorXi delta;        // censoring indicators along the order
  Eigen::VectorXi subj;         // ordered position -> subject index
  Eigen::VectorXi ar1_slot;     // ordered position -> record-level u index
                                // (subject-major, event_index ascending)
  std::vector<int> n_per_subject;  // records per subject (subject order)
  std::vector<int> risk_begin;  // first position of the tie group at r
  std::vector<int> group_of;    // ordered position -> tie-group id
  std::vector<int> group_start; // tie-group id -> first ordered position
  std::vector<int> event_pos;   // ordered positions with delta == 1

  int groups() const { return static_cast<int>(group_start.size()); }
  int group_end(int gid) const {
    return gid + 1 < groups() ? group_start[gid + 1] : n;
  }
  // Random-effect dimension for a given structure.
  int u_dim(Frailty structure) const {
    return structure == Frailty::constant ? m : n;
  }
  int u_slot(int pos, Frailty structure) const {
    return structure == Frailty::constant ? subj[pos] : ar1_slot[pos];
  }
};

// Nested risk sets R(r) = { l : t_(l) >= t_(r) }, kept in the compact
// suffix representation; members() expands one set (test/diagnostic use).
struct RiskSet {
  int n = 0;
  std::vector<int> begin_pos;  // R(r) = [begin_pos[r], n)

  std::vector<int> members(int r) const {
    std::vector<int> out;
    out.reserve(n - begin_pos[r]);
    for (int l = begin_pos[r]; l < n; ++l) out.push_back(l);
    return out;
  }
};

// Parse a flat key-value schema/config file (lines "key = value"; '#' starts
// a comment). Recognized keys: incidence_covariates, latency_covariates
// (comma-separated column names) and standardize (true/false).
Schema load_schema(const std::string& path);

// Load and validate a CSV file per the schema. Required columns: subject_id,
// event_index, gap_time, status. Covariates must be constant within subject.
RecurrentDataset load_dataset(const std::string& path, const Schema& schema);

// Write a dataset back to CSV (inverse of load_dataset for round-trips).
void write_dataset_csv(const RecurrentDataset& data, const std::string& path);

OrderedView order_records(const RecurrentDataset& data);

RiskSet risk_sets(const OrderedView& view);

}  // namespace fmcure
