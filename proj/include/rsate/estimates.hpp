// Estimate containers shared by every estimator: arm-level mean potential
// outcome estimates with per-record contributions, the tau-level estimate
// with its influence vector, and design treatment propensities.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rsate/dataset.hpp"

namespace rsate {

// Treatment propensity declared by design, never estimated.
struct DesignPropensity {
  enum class Kind { constant, stratified_by_region, table };
  Kind kind = Kind::constant;
  double p_treat = 0.5;
  std::map<int, double> p_by_region;  // stratified_by_region
  Eigen::VectorXd p_per_record;       // table, length n

  // P(A=1 | record i).
  double e1(const StudyDataset& d, Eigen::Index i) const;
  double e(const StudyDataset& d, Eigen::Index i, int arm) const {
    const double p = e1(d, i);
    return arm == 1 ? p : 1.0 - p;
  }

  static DesignPropensity constant(double p = 0.5);
  static DesignPropensity stratified(std::map<int, double> p_by_region);
  static DesignPropensity table(Eigen::VectorXd p_per_record);
};

struct ArmEstimate {
  double theta_hat = 0.0;
  int arm = 0;
  // Per-record psi-style contributions (length n); their mean over the rows
  // the method uses equals theta_hat.
  Eigen::VectorXd contributions;
};

struct TauEstimate {
  std::string method;
  double tau_hat = 0.0;
  ArmEstimate theta1, theta0;
  double se = 0.0;
  double ci_lower = 0.0, ci_upper = 0.0;
  double alpha = 0.05;
  // Selective-borrowing metadata (CSB estimators only).
  std::array<double, 2> gamma{-1.0, -1.0};  // [arm]; -1 = not applicable
  std::array<std::vector<int>, 2> borrowed_indices;
  // Tau-level per-record influence (length n, zero outside the rows used);
  // V-hat = mean of squared entries over n_used rows, se = sqrt(V-hat/n_used).
  Eigen::VectorXd influence;
  Eigen::Index n_used = 0;
  std::vector<std::string> flags;

  int borrowed_count() const {
    return static_cast<int>(borrowed_indices[0].size() +
                            borrowed_indices[1].size());
  }
  // Two-sided asymptotic p-value from the normal reference; 1.0 if se == 0.
  double asymptotic_pvalue() const;
};

double normal_quantile(double p);
double normal_cdf(double z);

// tau-hat -+ z_{1-alpha/2} * sqrt(v_hat / n).
std::pair<double, double> confidence_interval(double tau_hat, double v_hat,
                                              std::int64_t n, double alpha);

// Difference in target-region arm means with unpooled two-sample SE.
TauEstimate difference_in_means(const StudyDataset& dataset,
                                double alpha = 0.05);

}  // namespace rsate
