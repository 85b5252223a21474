#include "rsate/conformal.hpp"

#include <algorithm>
#include <stdexcept>

#include "rsate/matrix_util.hpp"
#include "rsate/rng.hpp"

namespace rsate {

ConformalScoreTable conformal_scores(const StudyDataset& dataset, int arm,
                                     int K, std::uint64_t seed) {
  ConformalScoreTable t;
  t.arm = arm;
  for (int i : dataset.target_rows) {
    if (dataset.treatment[i] == arm) t.target_rows.push_back(i);
  }
  for (int i : dataset.aux_rows) {
    if (dataset.treatment[i] == arm) t.aux_rows.push_back(i);
  }
  const int m = static_cast<int>(t.target_rows.size());
  if (m < 2) {
    throw std::invalid_argument("conformal_scores: target arm " +
                                std::to_string(arm) + " has fewer than 2 rows");
  }
  t.K_used = K;
  if (K > m) {
    t.K_used = m;
    t.flags.push_back("K reduced to target arm count " + std::to_string(m));
  }
  if (t.K_used < 2) {
    throw std::invalid_argument("conformal_scores: K must be >= 2");
  }
  t.folds = kfold_split(t.target_rows, t.K_used,
                        derive_seed(seed, {streams::kConformal,
                                           static_cast<std::uint64_t>(arm)}));

  // One model per fold, trained on the other K-1 folds (X only).
  const Eigen::Index p = dataset.x.cols();
  std::vector<LinearModelFit> fits(static_cast<std::size_t>(t.K_used));
  for (int k = 1; k <= t.K_used; ++k) {
    std::vector<int> train;
    train.reserve(t.target_rows.size());
    for (int i : t.target_rows) {
      if (t.folds.fold_of.at(i) != k) train.push_back(i);
    }
    LinearModelFit& fit = fits[static_cast<std::size_t>(k - 1)];
    if (static_cast<Eigen::Index>(train.size()) >= p + 1) {
      fit = fit_linear(gather_rows(dataset.x, train),
                       gather(dataset.outcome, train));
    } else {
      fit.coefficients = Eigen::VectorXd::Zero(p + 1);
      double mean = 0.0;
      for (int i : train) mean += dataset.outcome[i];
      fit.coefficients[0] = train.empty() ? 0.0 : mean / train.size();
      t.flags.push_back("fold " + std::to_string(k) +
                        ": too few training rows, intercept-only fit");
    }
  }

  t.calib_scores.resize(m);
  for (int c = 0; c < m; ++c) {
    const int i = t.target_rows[static_cast<std::size_t>(c)];
    const int k = t.folds.fold_of.at(i);
    const double pred =
        fits[static_cast<std::size_t>(k - 1)].predict_one(dataset.x.row(i));
    t.calib_scores[c] = std::abs(dataset.outcome[i] - pred);
  }

  t.aux_scores.resize(static_cast<Eigen::Index>(t.aux_rows.size()), m);
  Eigen::VectorXd fold_preds(t.K_used);
  for (std::size_t r = 0; r < t.aux_rows.size(); ++r) {
    const int j = t.aux_rows[r];
    for (int k = 0; k < t.K_used; ++k) {
      fold_preds[k] =
          fits[static_cast<std::size_t>(k)].predict_one(dataset.x.row(j));
    }
    for (int c = 0; c < m; ++c) {
      const int k = t.folds.fold_of.at(t.target_rows[static_cast<std::size_t>(c)]);
      t.aux_scores(static_cast<Eigen::Index>(r), c) =
          std::abs(dataset.outcome[j] - fold_preds[k - 1]);
    }
  }
  return t;
}

double PValueTable::p_of(int record_index, int arm) const {
  const auto& list = entries[static_cast<std::size_t>(arm)];
  auto it = std::lower_bound(
      list.begin(), list.end(), record_index,
      [](const std::pair<int, double>& e, int idx) { return e.first < idx; });
  if (it != list.end() && it->first == record_index) return it->second;
  return 1.0;  // target rows carry p = 1 by convention
}

PValueTable cvplus_pvalues(const ConformalScoreTable& table) {
  PValueTable out;
  out.K = table.K_used;
  out.flags = table.flags;
  auto& list = out.entries[static_cast<std::size_t>(table.arm)];
  const int m = static_cast<int>(table.target_rows.size());
  list.reserve(table.aux_rows.size());
  for (std::size_t r = 0; r < table.aux_rows.size(); ++r) {
    int count = 0;
    for (int c = 0; c < m; ++c) {
      if (table.calib_scores[c] >=
          table.aux_scores(static_cast<Eigen::Index>(r), c)) {
        ++count;
      }
    }
    list.emplace_back(table.aux_rows[r],
                      static_cast<double>(count + 1) /
                          static_cast<double>(m + 1));
  }
  return out;
}

PValueTable compute_pvalues(const StudyDataset& dataset, int K,
                            std::uint64_t seed) {
  PValueTable out;
  out.K = K;
  out.seed = seed;
  for (int arm : {0, 1}) {
    const ConformalScoreTable t = conformal_scores(dataset, arm, K, seed);
    PValueTable part = cvplus_pvalues(t);
    out.entries[static_cast<std::size_t>(arm)] =
        std::move(part.entries[static_cast<std::size_t>(arm)]);
    out.flags.insert(out.flags.end(), part.flags.begin(), part.flags.end());
  }
  return out;
}

}  // namespace rsate
