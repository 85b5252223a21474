// Nuisance-model fitting: least-squares outcome regressions, IRLS logistic
// regression for sampling/selection propensities, and K-fold utilities.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace rsate {

constexpr double kDefaultClipEps = 0.01;
constexpr int kLogisticMaxIter = 100;
constexpr double kLogisticTol = 1e-8;

struct LinearModelFit {
  Eigen::VectorXd coefficients;  // intercept first
  std::vector<std::string> feature_names;
  double residual_mse = 0.0;
  bool rank_deficient = false;

  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return coefficients[0] + x * coefficients.tail(coefficients.size() - 1);
  }
};

struct LogisticModelFit {
  Eigen::VectorXd coefficients;  // intercept first
  bool converged = false;
  int iterations = 0;
  double clip_eps = kDefaultClipEps;

  double predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct FoldAssignment {
  std::unordered_map<int, int> fold_of;  // record index -> fold id in 1..K
  int K = 0;
  std::uint64_t seed = 0;
};

// Least squares with an intercept; `features` holds the covariates only.
// Rank-deficient designs are solved by minimum-norm pseudo-inverse and the
// fit is flagged instead of failing (bootstrap resamples can degenerate).
LinearModelFit fit_linear(const Eigen::Ref<const Eigen::MatrixXd>& features,
                          const Eigen::Ref<const Eigen::VectorXd>& response,
                          std::vector<std::string> feature_names = {});

// IRLS maximization of the Bernoulli log-likelihood with an intercept.
// Requires both label classes; complete separation ends at max_iter with
// converged=false and predictions kept usable by clipping.
LogisticModelFit fit_logistic(const Eigen::Ref<const Eigen::MatrixXd>& features,
                              const Eigen::Ref<const Eigen::VectorXd>& labels,
                              int max_iter = kLogisticMaxIter,
                              double tol = kLogisticTol,
                              const Eigen::VectorXd* warm_start = nullptr);

Eigen::VectorXd predict(const LinearModelFit& fit,
                        const Eigen::Ref<const Eigen::MatrixXd>& features);

// Inverse-logit of the linear predictor, clipped to [clip_eps, 1-clip_eps].
Eigen::VectorXd predict(const LogisticModelFit& fit,
                        const Eigen::Ref<const Eigen::MatrixXd>& features);

// Uniformly random balanced partition of `indices` into K folds.
FoldAssignment kfold_split(const std::vector<int>& indices, int K,
                           std::uint64_t seed);

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double inverse_logit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace rsate
