#include "fmcure/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace fmcure {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& cell, int line_no, const std::string& col) {
  std::string s = trim(cell);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("non-numeric value '" + s + "' in column '" + col +
                     "' at row " + std::to_string(line_no));
  return v;
}

int parse_int(const std::string& cell, int line_no, const std::string& col) {
  std::string s = trim(cell);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("non-integer value '" + s + "' in column '" + col +
                     "' at row " + std::to_string(line_no));
  return v;
}

// Standardize columns in place to mean 0 / variance 1 (population SD).
void standardize_columns(Eigen::MatrixXd& mat,
                         const std::vector<std::string>& names) {
  const auto m = static_cast<double>(mat.rows());
  for (Eigen::Index j = 0; j < mat.cols(); ++j) {
    double mean = mat.col(j).mean();
    double sd = std::sqrt((mat.col(j).array() - mean).square().sum() / m);
    if (sd < 1e-12)
      throw IntegrityError("covariate column '" + names[j] +
                           "' is constant and cannot be standardized");
    mat.col(j) = (mat.col(j).array() - mean) / sd;
  }
}

}  // namespace

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Schema schema;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line without '=': '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "incidence_covariates" || key == "latency_covariates") {
      std::vector<std::string> names;
      for (const auto& part : split(value, ','))
        if (!trim(part).empty()) names.push_back(trim(part));
      if (key == "incidence_covariates")
        schema.incidence_covariates = names;
      else
        schema.latency_covariates = names;
    } else if (key == "standardize") {
      if (value == "true" || value == "1")
        schema.standardize = true;
      else if (value == "false" || value == "0")
        schema.standardize = false;
      else
        throw ConfigError("standardize must be true/false, got '" + value + "'");
    }
    // Other keys may mirror CLI flags; they are handled by the CLI layer.
  }
  return schema;
}

RecurrentDataset load_dataset(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open data file '" + path + "'");

  std::string header_line;
  if (!std::getline(in, header_line))
    throw ParseError("empty data file '" + path + "'");
  auto headers = split(trim(header_line), ',');
  std::map<std::string, int> col_of;
  for (size_t j = 0; j < headers.size(); ++j) col_of[trim(headers[j])] = static_cast<int>(j);

  auto require = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end())
      throw SchemaError("missing required column '" + name + "'");
    return it->second;
  };
  const int c_subject = require("subject_id");
  const int c_event = require("event_index");
  const int c_time = require("gap_time");
  const int c_status = require("status");

  std::vector<int> inc_cols, lat_cols;
  for (const auto& name : schema.incidence_covariates) inc_cols.push_back(require(name));
  for (const auto& name : schema.latency_covariates) lat_cols.push_back(require(name));

  struct RawRow {
    RecordRow rec;
    std::vector<double> inc, lat;
  };
  std::vector<RawRow> raw;
  std::string line;
  int line_no = 1;  // header was line 1
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != headers.size())
      throw ParseError("row " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " fields, expected " +
                       std::to_string(headers.size()));
    RawRow r;
    r.rec.subject_id = parse_int(cells[c_subject], line_no, "subject_id");
    r.rec.event_index = parse_int(cells[c_event], line_no, "event_index");
    r.rec.gap_time = parse_double(cells[c_time], line_no, "gap_time");
    r.rec.status = parse_int(cells[c_status], line_no, "status");
    if (r.rec.status != 0 && r.rec.status != 1)
      throw IntegrityError("status must be 0 or 1 at row " + std::to_string(line_no));
    if (!(r.rec.gap_time >= 0) || !std::isfinite(r.rec.gap_time))
      throw IntegrityError("gap_time must be a nonnegative finite number at row " +
                           std::to_string(line_no));
    if (r.rec.event_index < 1)
      throw IntegrityError("event_index must be >= 1 at row " + std::to_string(line_no));
    for (size_t k = 0; k < inc_cols.size(); ++k)
      r.inc.push_back(parse_double(cells[inc_cols[k]], line_no,
                                   schema.incidence_covariates[k]));
    for (size_t k = 0; k < lat_cols.size(); ++k)
      r.lat.push_back(parse_double(cells[lat_cols[k]], line_no,
                                   schema.latency_covariates[k]));
    raw.push_back(std::move(r));
  }
  if (raw.empty()) throw IntegrityError("data file contains no records");

  // Duplicate (subject, event) detection.
  std::set<std::pair<int, int>> seen;
  for (const auto& r : raw)
    if (!seen.insert({r.rec.subject_id, r.rec.event_index}).second)
      throw IntegrityError("duplicate (subject_id, event_index) = (" +
                           std::to_string(r.rec.subject_id) + ", " +
                           std::to_string(r.rec.event_index) + ")");

  // Subjects in ascending id order.
  std::set<int> ids;
  for (const auto& r : raw) ids.insert(r.rec.subject_id);
  RecurrentDataset data;
  data.subject_ids.assign(ids.begin(), ids.end());
  std::map<int, int> idx_of;
  for (size_t i = 0; i < data.subject_ids.size(); ++i)
    idx_of[data.subject_ids[i]] = static_cast<int>(i);

  const int m = static_cast<int>(data.subject_ids.size());
  const int d = static_cast<int>(inc_cols.size());
  const int p = static_cast<int>(lat_cols.size());
  data.x.setZero(m, d);
  data.z.setZero(m, p);
  std::vector<bool> filled(m, false);
  for (const auto& r : raw) {
    int i = idx_of[r.rec.subject_id];
    if (!filled[i]) {
      for (int k = 0; k < d; ++k) data.x(i, k) = r.inc[k];
      for (int k = 0; k < p; ++k) data.z(i, k) = r.lat[k];
      filled[i] = true;
    } else {
      for (int k = 0; k < d; ++k)
        if (data.x(i, k) != r.inc[k])
          throw IntegrityError("covariate '" + schema.incidence_covariates[k] +
                               "' varies within subject " +
                               std::to_string(r.rec.subject_id));
      for (int k = 0; k < p; ++k)
        if (data.z(i, k) != r.lat[k])
          throw IntegrityError("covariate '" + schema.latency_covariates[k] +
                               "' varies within subject " +
                               std::to_string(r.rec.subject_id));
    }
    data.rows.push_back(r.rec);
    data.subject_of_row.push_back(i);
  }
  data.incidence_names = schema.incidence_covariates;
  data.latency_names = schema.latency_covariates;

  if (schema.standardize) {
    standardize_columns(data.x, data.incidence_names);
    standardize_columns(data.z, data.latency_names);
  }
  return data;
}

void write_dataset_csv(const RecurrentDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "subject_id,event_index,gap_time,status";
  for (const auto& name : data.incidence_names) out << "," << name;
  // Latency columns not shared with incidence get their own columns.
  std::vector<int> extra_lat;
  for (int k = 0; k < data.p(); ++k) {
    auto it = std::find(data.incidence_names.begin(), data.incidence_names.end(),
                        data.latency_names[k]);
    if (it == data.incidence_names.end()) {
      extra_lat.push_back(k);
      out << "," << data.latency_names[k];
    }
  }
  out << "\n";
  char buf[64];
  for (size_t r = 0; r < data.rows.size(); ++r) {
    const auto& rec = data.rows[r];
    int i = data.subject_of_row[r];
    out << rec.subject_id << "," << rec.event_index << ",";
    std::snprintf(buf, sizeof buf, "%.17g", rec.gap_time);
    out << buf << "," << rec.status;
    for (int k = 0; k < data.d(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", data.x(i, k));
      out << "," << buf;
    }
    for (int k : extra_lat) {
      std::snprintf(buf, sizeof buf, "%.17g", data.z(i, k));
      out << "," << buf;
    }
    out << "\n";
  }
}

OrderedView order_records(const RecurrentDataset& data) {
  if (data.rows.empty()) throw IntegrityError("cannot order an empty dataset");
  OrderedView view;
  view.n = data.n();
  view.m = data.m();
  view.d = data.d();
  view.p = data.p();

  view.perm.resize(view.n);
  std::iota(view.perm.begin(), view.perm.end(), 0);
  std::sort(view.perm.begin(), view.perm.end(), [&](int a, int b) {
    const auto& ra = data.rows[a];
    const auto& rb = data.rows[b];
    if (ra.gap_time != rb.gap_time) return ra.gap_time < rb.gap_time;
    if (ra.subject_id != rb.subject_id) return ra.subject_id < rb.subject_id;
    return ra.event_index < rb.event_index;
  });

  view.W.setOnes(view.n, view.d + 1);
  view.Z.setZero(view.n, view.p);
  view.t.resize(view.n);
  view.delta.resize(view.n);
  view.subj.resize(view.n);
  view.n_per_subject.assign(view.m, 0);
  for (int i : data.subject_of_row) ++view.n_per_subject[i];

  // Record-level u slots: subject-major, ordered by event_index within subject.
  std::vector<int> offset(view.m, 0);
  for (int i = 1; i < view.m; ++i)
    offset[i] = offset[i - 1] + view.n_per_subject[i - 1];
  // rank of each original row within its subject by event_index
  std::vector<std::vector<std::pair<int, int>>> per_subj(view.m);
  for (int r = 0; r < view.n; ++r)
    per_subj[data.subject_of_row[r]].push_back({data.rows[r].event_index, r});
  std::vector<int> slot_of_row(view.n);
  for (int i = 0; i < view.m; ++i) {
    auto& v = per_subj[i];
    std::sort(v.begin(), v.end());
    for (size_t k = 0; k < v.size(); ++k)
      slot_of_row[v[k].second] = offset[i] + static_cast<int>(k);
  }

  view.ar1_slot.resize(view.n);
  for (int r = 0; r < view.n; ++r) {
    int orig = view.perm[r];
    int i = data.subject_of_row[orig];
    view.t[r] = data.rows[orig].gap_time;
    view.delta[r] = data.rows[orig].status;
    view.subj[r] = i;
    view.ar1_slot[r] = slot_of_row[orig];
    view.W.row(r).tail(view.d) = data.x.row(i);
    if (view.p > 0) view.Z.row(r) = data.z.row(i);
  }

  // Tie groups (exact equality of sorted gap times) and suffix risk sets.
  view.group_of.resize(view.n);
  view.risk_begin.resize(view.n);
  for (int r = 0; r < view.n; ++r) {
    if (r == 0 || view.t[r] != view.t[r - 1]) {
      view.group_start.push_back(r);
    }
    view.group_of[r] = static_cast<int>(view.group_start.size()) - 1;
    view.risk_begin[r] = view.group_start[view.group_of[r]];
    if (view.delta[r] == 1) view.event_pos.push_back(r);
  }
  return view;
}

RiskSet risk_sets(const OrderedView& view) {
  RiskSet rs;
  rs.n = view.n;
  rs.begin_pos = view.risk_begin;
  return rs;
}

}  // namespace fmcure
