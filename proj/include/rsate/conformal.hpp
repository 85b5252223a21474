// CV+ conformal p-values quantifying per-patient exchangeability of
// auxiliary observations with the target region.
//
// Scores are absolute residuals from K-fold cross-fitted outcome regressions
// on the shared covariates X only, so the same model scores both the target
// calibration rows and the auxiliary candidates.

#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "rsate/dataset.hpp"
#include "rsate/models.hpp"

namespace rsate {

struct ConformalScoreTable {
  int arm = 0;
  FoldAssignment folds;            // over target arm record indices
  std::vector<int> target_rows;    // record indices, dataset order
  std::vector<int> aux_rows;       // record indices, dataset order
  Eigen::VectorXd calib_scores;    // s_i, one per target arm row
  Eigen::MatrixXd aux_scores;      // s_j^(i): aux rows x target rows
  int K_used = 0;
  std::vector<std::string> flags;
};

// K-fold cross-fitted absolute-residual scores for one arm. K is reduced to
// the target arm count when larger (flagged); folds too small to fit the
// regression fall back to an intercept-only fit (flagged). The fold split
// derives from (seed, arm), so one seed governs both arms.
ConformalScoreTable conformal_scores(const StudyDataset& dataset, int arm,
                                     int K, std::uint64_t seed);

struct PValueTable {
  int K = 0;
  std::uint64_t seed = 0;
  // Per arm: (auxiliary record index, p-value), ascending record index.
  std::array<std::vector<std::pair<int, double>>, 2> entries;
  std::vector<std::string> flags;

  // Target rows implicitly carry p = 1; unknown auxiliary rows are an error.
  double p_of(int record_index, int arm) const;
};

// p_j = (#{i : s_i >= s_j^(i)} + 1) / (|target arm| + 1).
PValueTable cvplus_pvalues(const ConformalScoreTable& table);

// Both arms in one table.
PValueTable compute_pvalues(const StudyDataset& dataset, int K,
                            std::uint64_t seed);

}  // namespace rsate
