// Dataset model: schema, records, CSV ingestion, validation, and the
// nearest-neighbor matching pre-processor.
//
// Region label 1 is the target region; any other label is an auxiliary
// region. Record order is stable after construction: selection sets, FRT
// draws, and influence vectors all address records by their index.

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace rsate {

constexpr int kTargetRegion = 1;

struct CovariateSchema {
  std::vector<std::string> shared_names;       // columns for X
  std::vector<std::string> target_only_names;  // columns for U
  std::string region_column = "R";
  std::string treatment_column = "A";
  std::string outcome_column = "Y";

  // Throws std::invalid_argument when names collide or X is empty.
  void check() const;
};

struct TrialRecord {
  int region = 0;
  int treatment = 0;
  double outcome = 0.0;
  Eigen::VectorXd x;
  std::optional<Eigen::VectorXd> u;
};

struct StudyDataset {
  CovariateSchema schema;
  Eigen::VectorXi region;
  Eigen::VectorXi treatment;
  Eigen::VectorXd outcome;
  Eigen::MatrixXd x;  // n x |shared|
  Eigen::MatrixXd u;  // n x |target_only|, NaN where absent
  std::vector<std::uint8_t> u_present;

  // Derived, filled by finalize().
  Eigen::Index n_target = 0;
  Eigen::Index n_aux = 0;
  std::vector<int> target_rows;
  std::vector<int> aux_rows;

  Eigen::Index n() const { return region.size(); }
  bool is_target(Eigen::Index i) const { return region[i] == kTargetRegion; }
  TrialRecord record(Eigen::Index i) const;

  // Recomputes counts and row caches; throws on shape mismatches.
  void finalize();

  static StudyDataset from_records(CovariateSchema schema,
                                   const std::vector<TrialRecord>& records);
};

struct LoadReport {
  int rows_dropped_missing = 0;
  std::vector<std::string> notes;
};

// CSV with a header row; absent U encoded as an empty cell or "NA". Rows
// with a missing region/treatment/outcome/shared-covariate cell are dropped
// (counted in the report); malformed non-numeric cells raise a parse error.
StudyDataset load_dataset(const std::string& path, const CovariateSchema& schema,
                          LoadReport* report = nullptr);

// Shortest round-trip float formatting, so load(save(d)) is bit-exact.
void save_dataset(const std::string& path, const StudyDataset& dataset);

// Empty result iff every dataset invariant holds; each violation names the
// offending row and rule. Violations are returned, never thrown.
std::vector<std::string> validate(const StudyDataset& dataset);

// Greedy 1:`ratio` nearest-neighbor matching on a scalar score, without
// replacement, target records in dataset order, ties to the lower record
// index. Auxiliary records with scores outside the target score range are
// excluded before matching. All target records are retained.
StudyDataset nn_match(const StudyDataset& dataset, int ratio,
                      const Eigen::VectorXd& score);

}  // namespace rsate
