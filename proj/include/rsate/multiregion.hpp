// Per-auxiliary-region estimation on region-specific shared covariates,
// influence-function covariance across regions, and inverse-variance-optimal
// combination of the region-wise estimates.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "rsate/csb.hpp"
#include "rsate/estimators.hpp"

namespace rsate {

struct RegionCovariateMap {
  // auxiliary region label -> subset of schema shared covariate names
  std::map<int, std::vector<std::string>> shared_of;
};

struct RegionEstimates {
  std::vector<int> labels;
  Eigen::VectorXd tau_hats;
  Eigen::VectorXd theta1s, theta0s;
  Eigen::MatrixXd sigma_hat;
  Eigen::VectorXd weights;  // empty until computed
  Eigen::Index n = 0;       // full dataset size
  double alpha = 0.05;
  std::vector<std::string> flags;
};

// Full-borrowing IVW estimator restricted to rows of regions {1, r} with X
// replaced by the named shared subset throughout. The returned influence
// vector has full dataset length with zeros outside {1, r}. An empty shared
// subset degrades to intercept-only nuisances (flagged).
TauEstimate estimate_fb_ivw_region(const StudyDataset& dataset,
                                   const DesignPropensity& design, int region,
                                   const std::vector<std::string>& shared,
                                   double alpha = 0.05,
                                   double clip_eps = kDefaultClipEps);

// Sigma[s][t] = (1/n) sum_i inf_s[i] * inf_t[i].
Eigen::MatrixXd influence_covariance(
    const std::vector<Eigen::VectorXd>& influences, Eigen::Index n);

// d = (1' Sigma^-1 1)^-1 Sigma^-1 1; near-singular Sigma is ridge-
// regularized with lambda = 1e-8 * trace/S (flagged).
Eigen::VectorXd optimal_weights(const Eigen::MatrixXd& sigma_hat,
                                std::vector<std::string>* flags = nullptr);

// Region-wise FB-IVW estimates plus covariance and optimal weights.
RegionEstimates estimate_all_regions(const StudyDataset& dataset,
                                     const DesignPropensity& design,
                                     const RegionCovariateMap& map,
                                     double alpha = 0.05,
                                     double clip_eps = kDefaultClipEps);

// tau = d' tau_vec, variance d' Sigma d, normal interval.
TauEstimate combine(const RegionEstimates& estimates,
                    std::string method = "FB-IVW-multiregion");

// Conformal selective borrowing per region: p-values and thresholds on
// X^(r), region-wise CSB-IVW estimates, then the optimal-weight combination.
TauEstimate select_by_region(const StudyDataset& dataset,
                             const DesignPropensity& design,
                             const RegionCovariateMap& map,
                             const CsbOptions& options);

}  // namespace rsate
