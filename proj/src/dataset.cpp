#include "rsate/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "rsate/estimates.hpp"

namespace rsate {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN";
}

// Returns false on a missing cell, throws on malformed content.
bool parse_double(const std::string& cell, int row, const std::string& col,
                  double* out) {
  if (is_missing(cell)) return false;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, *out);
  if (ec != std::errc() || ptr != last) {
    throw std::runtime_error("parse error: non-numeric value '" + cell +
                             "' in column " + col + ", data row " +
                             std::to_string(row));
  }
  return true;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  out.append(buf, ptr);
}

}  // namespace

void CovariateSchema::check() const {
  if (shared_names.empty()) {
    throw std::invalid_argument("schema: shared_names must be non-empty");
  }
  std::set<std::string> seen;
  auto add = [&seen](const std::string& name) {
    if (name.empty()) throw std::invalid_argument("schema: empty column name");
    if (!seen.insert(name).second) {
      throw std::invalid_argument("schema: duplicate column name '" + name +
                                  "'");
    }
  };
  add(region_column);
  add(treatment_column);
  add(outcome_column);
  for (const auto& n : shared_names) add(n);
  for (const auto& n : target_only_names) add(n);
}

TrialRecord StudyDataset::record(Eigen::Index i) const {
  TrialRecord r;
  r.region = region[i];
  r.treatment = treatment[i];
  r.outcome = outcome[i];
  r.x = x.row(i);
  if (u_present[static_cast<std::size_t>(i)]) r.u = u.row(i);
  return r;
}

void StudyDataset::finalize() {
  const Eigen::Index n = region.size();
  if (treatment.size() != n || outcome.size() != n || x.rows() != n ||
      u.rows() != n || u_present.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("dataset: column length mismatch");
  }
  if (x.cols() != static_cast<Eigen::Index>(schema.shared_names.size()) ||
      u.cols() != static_cast<Eigen::Index>(schema.target_only_names.size())) {
    throw std::invalid_argument("dataset: covariate width mismatch");
  }
  target_rows.clear();
  aux_rows.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (region[i] == kTargetRegion) {
      target_rows.push_back(static_cast<int>(i));
    } else {
      aux_rows.push_back(static_cast<int>(i));
    }
  }
  n_target = static_cast<Eigen::Index>(target_rows.size());
  n_aux = static_cast<Eigen::Index>(aux_rows.size());
}

StudyDataset StudyDataset::from_records(CovariateSchema schema,
                                        const std::vector<TrialRecord>& records) {
  schema.check();
  const Eigen::Index n = static_cast<Eigen::Index>(records.size());
  const Eigen::Index p = static_cast<Eigen::Index>(schema.shared_names.size());
  const Eigen::Index q =
      static_cast<Eigen::Index>(schema.target_only_names.size());
  StudyDataset d;
  d.schema = std::move(schema);
  d.region.resize(n);
  d.treatment.resize(n);
  d.outcome.resize(n);
  d.x.resize(n, p);
  d.u = Eigen::MatrixXd::Constant(n, q, kNaN);
  d.u_present.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TrialRecord& r = records[static_cast<std::size_t>(i)];
    if (r.x.size() != p) {
      throw std::invalid_argument("record " + std::to_string(i) +
                                  ": x width mismatch");
    }
    d.region[i] = r.region;
    d.treatment[i] = r.treatment;
    d.outcome[i] = r.outcome;
    d.x.row(i) = r.x;
    if (r.u.has_value()) {
      if (r.u->size() != q) {
        throw std::invalid_argument("record " + std::to_string(i) +
                                    ": u width mismatch");
      }
      d.u.row(i) = *r.u;
      d.u_present[static_cast<std::size_t>(i)] = 1;
    }
  }
  d.finalize();
  return d;
}

StudyDataset load_dataset(const std::string& path,
                          const CovariateSchema& schema, LoadReport* report) {
  schema.check();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::string line;
  do {  // leading '#' lines carry config echoes; skip them
    if (!std::getline(in, line)) {
      throw std::runtime_error("dataset file is empty: " + path);
    }
  } while (!line.empty() && line[0] == '#');
  const std::vector<std::string> header = split_csv_line(line);
  std::unordered_map<std::string, int> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    col_of[header[c]] = static_cast<int>(c);
  }
  auto require = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) {
      throw std::runtime_error("schema error: column '" + name +
                               "' not found in " + path);
    }
    return it->second;
  };
  const int region_col = require(schema.region_column);
  const int treat_col = require(schema.treatment_column);
  const int outcome_col = require(schema.outcome_column);
  std::vector<int> x_cols, u_cols;
  for (const auto& nm : schema.shared_names) x_cols.push_back(require(nm));
  for (const auto& nm : schema.target_only_names) u_cols.push_back(require(nm));

  std::vector<TrialRecord> records;
  LoadReport local;
  int row = 0;
  const Eigen::Index p = static_cast<Eigen::Index>(x_cols.size());
  const Eigen::Index q = static_cast<Eigen::Index>(u_cols.size());
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("parse error: data row " + std::to_string(row) +
                               " has " + std::to_string(cells.size()) +
                               " cells, expected " +
                               std::to_string(header.size()));
    }
    TrialRecord r;
    double v = 0.0;
    bool complete = true;
    auto get = [&](int col, const std::string& name) {
      if (!parse_double(cells[static_cast<std::size_t>(col)], row, name, &v)) {
        complete = false;
      }
      return v;
    };
    const double region_v = get(region_col, schema.region_column);
    const double treat_v = get(treat_col, schema.treatment_column);
    r.outcome = get(outcome_col, schema.outcome_column);
    r.x.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      r.x[j] = get(x_cols[static_cast<std::size_t>(j)],
                   schema.shared_names[static_cast<std::size_t>(j)]);
    }
    if (!complete) {
      ++local.rows_dropped_missing;
      continue;
    }
    r.region = static_cast<int>(std::llround(region_v));
    r.treatment = static_cast<int>(std::llround(treat_v));
    if (treat_v != 0.0 && treat_v != 1.0) {
      throw std::runtime_error("validation error: treatment not in {0,1} at data row " +
                               std::to_string(row));
    }
    if (q > 0) {
      Eigen::VectorXd uvec(q);
      bool any = false, all = true;
      for (Eigen::Index j = 0; j < q; ++j) {
        double uv = 0.0;
        if (parse_double(cells[static_cast<std::size_t>(u_cols[static_cast<std::size_t>(j)])],
                         row, schema.target_only_names[static_cast<std::size_t>(j)],
                         &uv)) {
          uvec[j] = uv;
          any = true;
        } else {
          all = false;
        }
      }
      if (r.region == kTargetRegion && !all) {
        throw std::runtime_error(
            "validation error: target-region row missing target-only covariate at data row " +
            std::to_string(row));
      }
      if (any && !all) {
        throw std::runtime_error(
            "parse error: partially missing target-only covariates at data row " +
            std::to_string(row));
      }
      if (all) r.u = std::move(uvec);
    } else {
      r.u = Eigen::VectorXd(0);
    }
    records.push_back(std::move(r));
  }
  if (report != nullptr) *report = std::move(local);
  return StudyDataset::from_records(schema, records);
}

void save_dataset(const std::string& path, const StudyDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  std::string buf;
  const auto& s = dataset.schema;
  buf = s.region_column + "," + s.treatment_column + "," + s.outcome_column;
  for (const auto& nm : s.shared_names) buf += "," + nm;
  for (const auto& nm : s.target_only_names) buf += "," + nm;
  buf += "\n";
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    buf += std::to_string(dataset.region[i]);
    buf += ",";
    buf += std::to_string(dataset.treatment[i]);
    buf += ",";
    append_double(buf, dataset.outcome[i]);
    for (Eigen::Index j = 0; j < dataset.x.cols(); ++j) {
      buf += ",";
      append_double(buf, dataset.x(i, j));
    }
    for (Eigen::Index j = 0; j < dataset.u.cols(); ++j) {
      buf += ",";
      if (dataset.u_present[static_cast<std::size_t>(i)]) {
        append_double(buf, dataset.u(i, j));
      } else {
        buf += "NA";
      }
    }
    buf += "\n";
    out << buf;
    buf.clear();
  }
}

std::vector<std::string> validate(const StudyDataset& dataset) {
  std::vector<std::string> violations;
  const Eigen::Index n = dataset.n();
  int target_treated = 0, target_control = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string row = "row " + std::to_string(i);
    if (dataset.treatment[i] != 0 && dataset.treatment[i] != 1) {
      violations.push_back(row + ": treatment not in {0,1}");
    }
    if (!std::isfinite(dataset.outcome[i])) {
      violations.push_back(row + ": non-finite outcome");
    }
    if (!dataset.x.row(i).allFinite()) {
      violations.push_back(row + ": missing shared covariate");
    }
    if (dataset.is_target(i)) {
      if (!dataset.u_present[static_cast<std::size_t>(i)] &&
          dataset.u.cols() > 0) {
        violations.push_back(row + ": target-region row without target-only covariates");
      }
      (dataset.treatment[i] == 1 ? target_treated : target_control)++;
    }
  }
  if (dataset.n_target < 2) {
    violations.push_back("dataset: fewer than 2 target-region records");
  }
  if (dataset.n_target >= 2 && target_treated == 0) {
    violations.push_back("dataset: no target treated");
  }
  if (dataset.n_target >= 2 && target_control == 0) {
    violations.push_back("dataset: no target controls");
  }
  return violations;
}

StudyDataset nn_match(const StudyDataset& dataset, int ratio,
                      const Eigen::VectorXd& score) {
  if (score.size() != dataset.n()) {
    throw std::invalid_argument("nn_match: score length != dataset size");
  }
  if (ratio < 1) throw std::invalid_argument("nn_match: ratio must be >= 1");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (int i : dataset.target_rows) {
    lo = std::min(lo, score[i]);
    hi = std::max(hi, score[i]);
  }

  // Candidate auxiliary pool per arm, support-filtered.
  std::array<std::vector<int>, 2> pool;
  for (int j : dataset.aux_rows) {
    if (score[j] < lo || score[j] > hi) continue;
    pool[dataset.treatment[j]].push_back(j);
  }
  if (pool[0].empty() && pool[1].empty()) {
    throw std::invalid_argument("nn_match: auxiliary pool empty after support filter");
  }

  std::vector<std::uint8_t> used(static_cast<std::size_t>(dataset.n()), 0);
  std::vector<int> kept;
  for (int i : dataset.target_rows) {
    const auto& candidates = pool[dataset.treatment[i]];
    for (int m = 0; m < ratio; ++m) {
      int best = -1;
      double best_dist = std::numeric_limits<double>::infinity();
      for (int j : candidates) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double dist = std::abs(score[j] - score[i]);
        if (dist < best_dist || (dist == best_dist && j < best)) {
          best = j;
          best_dist = dist;
        }
      }
      if (best < 0) break;
      used[static_cast<std::size_t>(best)] = 1;
      kept.push_back(best);
    }
  }

  for (int i : dataset.target_rows) kept.push_back(i);
  std::sort(kept.begin(), kept.end());

  std::vector<TrialRecord> records;
  records.reserve(kept.size());
  for (int i : kept) records.push_back(dataset.record(i));
  return StudyDataset::from_records(dataset.schema, records);
}

}  // namespace rsate
