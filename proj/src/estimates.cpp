#include "rsate/estimates.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <stdexcept>

namespace rsate {

double DesignPropensity::e1(const StudyDataset& d, Eigen::Index i) const {
  switch (kind) {
    case Kind::constant:
      return p_treat;
    case Kind::stratified_by_region: {
      auto it = p_by_region.find(d.region[i]);
      if (it == p_by_region.end()) {
        throw std::invalid_argument(
            "design propensity: no entry for region " +
            std::to_string(d.region[i]));
      }
      return it->second;
    }
    case Kind::table:
      if (p_per_record.size() != d.n()) {
        throw std::invalid_argument("design propensity: table length mismatch");
      }
      return p_per_record[i];
  }
  return p_treat;
}

namespace {
void check_prob(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("design propensity: probability must lie in (0,1)");
  }
}
}  // namespace

DesignPropensity DesignPropensity::constant(double p) {
  check_prob(p);
  DesignPropensity d;
  d.kind = Kind::constant;
  d.p_treat = p;
  return d;
}

DesignPropensity DesignPropensity::stratified(std::map<int, double> p_by_region) {
  for (const auto& [r, p] : p_by_region) {
    (void)r;
    check_prob(p);
  }
  DesignPropensity d;
  d.kind = Kind::stratified_by_region;
  d.p_by_region = std::move(p_by_region);
  return d;
}

DesignPropensity DesignPropensity::table(Eigen::VectorXd p_per_record) {
  for (Eigen::Index i = 0; i < p_per_record.size(); ++i) {
    check_prob(p_per_record[i]);
  }
  DesignPropensity d;
  d.kind = Kind::table;
  d.p_per_record = std::move(p_per_record);
  return d;
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

double normal_cdf(double z) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::cdf(standard, z);
}

std::pair<double, double> confidence_interval(double tau_hat, double v_hat,
                                              std::int64_t n, double alpha) {
  if (v_hat < 0.0) throw std::invalid_argument("confidence_interval: v_hat < 0");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("confidence_interval: alpha must lie in (0,1)");
  }
  const double half =
      normal_quantile(1.0 - alpha / 2.0) * std::sqrt(v_hat / static_cast<double>(n));
  return {tau_hat - half, tau_hat + half};
}

double TauEstimate::asymptotic_pvalue() const {
  if (se <= 0.0) return 1.0;
  return 2.0 * (1.0 - normal_cdf(std::abs(tau_hat / se)));
}

TauEstimate difference_in_means(const StudyDataset& dataset, double alpha) {
  double sum[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (int i : dataset.target_rows) {
    const int a = dataset.treatment[i];
    sum[a] += dataset.outcome[i];
    count[a] += 1.0;
  }
  if (count[0] == 0.0 || count[1] == 0.0) {
    throw std::invalid_argument("difference_in_means: empty target arm");
  }
  const double mean1 = sum[1] / count[1];
  const double mean0 = sum[0] / count[0];

  double ss[2] = {0.0, 0.0};
  for (int i : dataset.target_rows) {
    const int a = dataset.treatment[i];
    const double d = dataset.outcome[i] - (a == 1 ? mean1 : mean0);
    ss[a] += d * d;
  }
  // Unpooled two-sample variance; degenerate single-row arms get se = 0.
  double var = 0.0;
  bool degenerate = false;
  for (int a : {0, 1}) {
    if (count[a] >= 2.0) {
      var += ss[a] / (count[a] - 1.0) / count[a];
    } else {
      degenerate = true;
    }
  }

  TauEstimate est;
  est.method = "DiM";
  est.alpha = alpha;
  est.tau_hat = mean1 - mean0;
  const double pi_r = static_cast<double>(dataset.n_target) /
                      static_cast<double>(dataset.n());
  for (int a : {0, 1}) {
    ArmEstimate arm;
    arm.arm = a;
    arm.theta_hat = a == 1 ? mean1 : mean0;
    arm.contributions = Eigen::VectorXd::Zero(dataset.n());
    const double frac = count[a] / static_cast<double>(dataset.n_target);
    for (int i : dataset.target_rows) {
      if (dataset.treatment[i] == a) {
        arm.contributions[i] = dataset.outcome[i] / frac / pi_r;
      }
    }
    (a == 1 ? est.theta1 : est.theta0) = std::move(arm);
  }
  est.se = std::sqrt(var);
  est.n_used = dataset.n();
  est.ci_lower = est.tau_hat - normal_quantile(1.0 - alpha / 2.0) * est.se;
  est.ci_upper = est.tau_hat + normal_quantile(1.0 - alpha / 2.0) * est.se;
  if (degenerate) est.flags.push_back("degenerate variance: single-record arm");
  return est;
}

}  // namespace rsate
