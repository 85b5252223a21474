#include <doctest.h>

#include <cmath>
#include <set>

#include "rsate/conformal.hpp"
#include "test_helpers.hpp"

using namespace rsate;

namespace {

// Target and auxiliary rows drawn from one exchangeable population; arms
// either all 1 (single-arm score tables) or alternating (full tables).
StudyDataset exchangeable_dataset(std::uint64_t seed, int n_target, int n_aux,
                                  bool alternate_arms = false) {
  Rng rng(seed);
  std::vector<std::vector<double>> target, aux;
  for (int i = 0; i < n_target; ++i) {
    const double x = rng.normal();
    const double arm = alternate_arms ? static_cast<double>(i % 2) : 1.0;
    target.push_back({arm, 0.5 + x + rng.normal(), x, 0.0});
  }
  for (int i = 0; i < n_aux; ++i) {
    const double x = rng.normal();
    const double arm = alternate_arms ? static_cast<double>(i % 2) : 1.0;
    aux.push_back({arm, 0.5 + x + rng.normal(), x});
  }
  return testing::make_dataset(1, 1, target, aux);
}

}  // namespace

TEST_SUITE_BEGIN("conformal");

TEST_CASE("noise-free linear outcomes give zero calibration scores") {
  // Target outcomes sit exactly on a line; auxiliary rows carry a constant
  // bias, so every cross-fitted model reproduces the line exactly.
  std::vector<std::vector<double>> target, aux;
  Rng rng(2);
  for (int i = 0; i < 8; ++i) {
    const double x = rng.normal();
    target.push_back({1.0, 1.0 + 2.0 * x, x, 0.0});
  }
  for (int i = 0; i < 3; ++i) {
    const double x = rng.normal();
    aux.push_back({1.0, 1.0 + 2.0 * x - 4.0, x});
  }
  const StudyDataset d = testing::make_dataset(1, 1, target, aux);
  const ConformalScoreTable t = conformal_scores(d, 1, 4, 9);
  CHECK(t.calib_scores.cwiseAbs().maxCoeff() < 1e-9);
  for (Eigen::Index r = 0; r < t.aux_scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.aux_scores.cols(); ++c) {
      CHECK(t.aux_scores(r, c) == doctest::Approx(4.0).epsilon(1e-9));
    }
  }
  // Every auxiliary p-value is then the minimum 1/(m+1).
  const PValueTable pv = cvplus_pvalues(t);
  for (const auto& [idx, p] : pv.entries[1]) {
    CHECK(p == doctest::Approx(1.0 / 9.0));
  }
}

TEST_CASE("score-table bookkeeping: K=2 over 4 target rows") {
  const StudyDataset d = exchangeable_dataset(5, 4, 6);
  const ConformalScoreTable t = conformal_scores(d, 1, 2, 11);
  CHECK(t.K_used == 2);
  CHECK(t.aux_scores.cols() == 4);
  CHECK(t.aux_scores.rows() == 6);
  // Columns belonging to the same fold share one fitted model, so the
  // auxiliary scores in those columns are identical.
  for (Eigen::Index c1 = 0; c1 < 4; ++c1) {
    for (Eigen::Index c2 = c1 + 1; c2 < 4; ++c2) {
      if (t.folds.fold_of.at(t.target_rows[c1]) ==
          t.folds.fold_of.at(t.target_rows[c2])) {
        CHECK((t.aux_scores.col(c1) - t.aux_scores.col(c2)).cwiseAbs().maxCoeff() <
              1e-12);
      }
    }
  }
}

TEST_CASE("same seed reproduces the table; K reduction is flagged") {
  const StudyDataset d = exchangeable_dataset(6, 7, 9);
  const ConformalScoreTable a = conformal_scores(d, 1, 4, 33);
  const ConformalScoreTable b = conformal_scores(d, 1, 4, 33);
  CHECK(a.calib_scores == b.calib_scores);
  CHECK(a.aux_scores == b.aux_scores);

  const ConformalScoreTable reduced = conformal_scores(d, 1, 50, 33);
  CHECK(reduced.K_used == 7);
  REQUIRE_FALSE(reduced.flags.empty());
  CHECK(reduced.flags[0].find("K reduced") != std::string::npos);
}

TEST_CASE("cvplus p-value extremes and support") {
  const StudyDataset d = exchangeable_dataset(7, 12, 20, /*alternate_arms=*/true);
  const PValueTable pv = compute_pvalues(d, 4, 17);
  for (int arm : {0, 1}) {
    int m_arm = 0;
    for (int i : d.target_rows) m_arm += d.treatment[i] == arm;
    for (const auto& [idx, p] : pv.entries[arm]) {
      // p lies on the grid {k/(m+1) : k = 1..m+1}
      const double scaled = p * (m_arm + 1);
      CHECK(std::abs(scaled - std::llround(scaled)) < 1e-12);
      CHECK(p >= 1.0 / (m_arm + 1));
      CHECK(p <= 1.0);
    }
  }
  // Unknown rows default to the target convention p = 1.
  CHECK(pv.p_of(d.target_rows[0], 1) == 1.0);
}

TEST_CASE("gross outliers get the minimal p-value") {
  std::vector<std::vector<double>> target, aux;
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    const double x = rng.normal();
    target.push_back({1.0, x + rng.normal(), x, 0.0});
  }
  for (int i = 0; i < 4; ++i) {
    const double x = rng.normal();
    target.push_back({0.0, x + rng.normal(), x, 0.0});
  }
  aux.push_back({1.0, 1000.0, 0.0});  // s_j dominates every calibration score
  const StudyDataset d = testing::make_dataset(1, 1, target, aux);
  const PValueTable pv = compute_pvalues(d, 5, 3);
  CHECK(pv.entries[1].size() == 1);
  CHECK(pv.entries[1][0].second == doctest::Approx(1.0 / 11.0));
}

TEST_CASE("monotonicity: growing deviation never raises the p-value") {
  // Conformal models are fit on target rows only, so shifting one auxiliary
  // outcome leaves every fit unchanged. Start above every fitted value so
  // each shift strictly grows the deviation.
  StudyDataset base = exchangeable_dataset(9, 16, 5, /*alternate_arms=*/true);
  base.outcome[base.aux_rows[0]] =
      3.0 * base.outcome.cwiseAbs().maxCoeff() + 10.0;
  double prev = 1.1;
  for (double shift : {0.0, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    StudyDataset d = base;
    d.outcome[d.aux_rows[0]] += shift;
    const PValueTable pv = compute_pvalues(d, 4, 77);
    const double p = pv.p_of(d.aux_rows[0], d.treatment[d.aux_rows[0]]);
    CHECK(p <= prev + 1e-12);
    prev = p;
  }
}

TEST_CASE("p-values are invariant to calibration-column permutation") {
  const StudyDataset d = exchangeable_dataset(10, 9, 7);
  ConformalScoreTable t = conformal_scores(d, 1, 3, 5);
  const PValueTable before = cvplus_pvalues(t);
  // Permute (calibration score, auxiliary column) pairs together.
  std::vector<int> perm(t.target_rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  Rng rng(6);
  rng.shuffle(perm);
  ConformalScoreTable shuffled = t;
  for (std::size_t c = 0; c < perm.size(); ++c) {
    shuffled.calib_scores[static_cast<Eigen::Index>(c)] =
        t.calib_scores[perm[c]];
    shuffled.aux_scores.col(static_cast<Eigen::Index>(c)) =
        t.aux_scores.col(perm[c]);
  }
  const PValueTable after = cvplus_pvalues(shuffled);
  for (std::size_t k = 0; k < before.entries[1].size(); ++k) {
    CHECK(before.entries[1][k].second ==
          doctest::Approx(after.entries[1][k].second));
  }
}

TEST_CASE("exchangeable auxiliary rows have superuniform p-values") {
  const int reps = 1000;
  std::array<double, 2> alphas{0.1, 0.5};
  std::array<int, 2> hits{0, 0};
  for (int r = 0; r < reps; ++r) {
    const StudyDataset d =
        exchangeable_dataset(derive_seed(1234, {static_cast<std::uint64_t>(r)}),
                             20, 1, /*alternate_arms=*/true);
    const PValueTable pv =
        compute_pvalues(d, 5, derive_seed(4321, {static_cast<std::uint64_t>(r)}));
    const int j = d.aux_rows[0];
    const double p = pv.p_of(j, d.treatment[j]);
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      hits[a] += p <= alphas[a];
    }
  }
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    CHECK(static_cast<double>(hits[a]) / reps <= alphas[a] + 0.04);
  }
}

TEST_SUITE_END();
