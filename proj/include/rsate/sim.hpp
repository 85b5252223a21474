// Monte Carlo engine: the multi-regional trial data-generating process, the
// true-estimand oracle, the conditional R^2 signal-ratio metric, and the
// replication runner producing MSE% / coverage / rejection tables.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rsate/csb.hpp"
#include "rsate/dataset.hpp"
#include "rsate/estimates.hpp"
#include "rsate/frt.hpp"

namespace rsate {

enum class CovariateScenario { independent, correlated };
enum class BiasArms { both, control_only };

struct DgpConfig {
  int n_target = 600;
  int n_aux = 1000;
  CovariateScenario scenario = CovariateScenario::independent;
  // Region-sampling logits: pi_1(X) = 1/(1+exp(X'eta1 + offset1)), pi_0
  // analogous; R ~ Bernoulli(pi_1/(pi_1+pi_0)).
  Eigen::Vector2d eta1{0.5, 0.3};
  Eigen::Vector2d eta0{-0.5, -0.2};
  double offset1 = 0.6;
  double offset0 = -0.4;
  double treat_p = 0.5;
  // Outcome means: beta_a = (intercept, X1, X2); U enters with alpha_a.
  Eigen::Vector3d beta0{0.0, 2.0, 2.0};
  Eigen::Vector3d beta1{3.0, 3.0, 3.0};
  double alpha0 = 0.5;
  double alpha1 = 1.0;
  double eps = 0.5;             // auxiliary noise variance
  double target_noise_var = 1.0;
  double b0 = 6.0;              // hidden bias, control arm
  double b1 = 10.0;             // hidden bias, treated arm
  double rho = 0.5;             // biased auxiliary fraction
  BiasArms bias_arms = BiasArms::both;
  // Constant-effect mode for randomization-test studies: target potential
  // outcomes share one noise draw from the control-arm model and differ by
  // tau_shift exactly (tau_shift = 0 is the sharp null). Auxiliary rows get
  // the same additive effect.
  bool constant_effect = false;
  double tau_shift = 0.0;
  int aux_region_count = 1;  // >1 assigns auxiliary rows labels 2..S+1

  DgpConfig& with_alpha(double a0) {
    alpha0 = a0;
    alpha1 = 2.0 * a0;
    return *this;
  }
  double bias_for_arm(int arm) const {
    if (arm == 1 && bias_arms == BiasArms::control_only) return 0.0;
    return arm == 1 ? b1 : b0;
  }
  void check() const;
};

struct GeneratedTrial {
  StudyDataset data;
  std::vector<std::uint8_t> biased;  // per record; only auxiliary rows can be 1
};

GeneratedTrial generate_trial(const DgpConfig& config, std::uint64_t seed);

struct McValue {
  double value = 0.0;
  double mc_se = 0.0;
  bool flagged = false;
};

// Monte Carlo E[Y(1) - Y(0) | R = 1] over n_mc accepted target draws; exact
// (tau_shift, 0) in constant-effect mode.
McValue true_rsate(const DgpConfig& config, std::int64_t n_mc,
                   std::uint64_t seed);

// R^2_{X|U} / R^2_{U|X} on a large simulated target-region control sample;
// +inf (flagged) when U carries no signal.
McValue signal_ratio(const DgpConfig& config, std::int64_t n_mc,
                     std::uint64_t seed);

struct Scenario {
  std::string name;
  DgpConfig dgp;
};

struct FrtSimConfig {
  bool enabled = false;
  int B = 500;
  RandomizationScheme scheme = RandomizationScheme::bernoulli(0.5);
};

struct SimOptions {
  CsbOptions csb;
  double alpha = 0.05;
  int workers = 0;
  std::int64_t oracle_mc = 200000;
  std::string checkpoint_dir;  // empty: no checkpoints
  bool resume = false;
};

struct MetricsRow {
  std::string scenario;
  DgpConfig dgp;
  double tau_true = 0.0;
  std::string method;
  double mse = 0.0;
  double mse_pct = 0.0;  // relative to NB-AllCov * 100; NaN if unavailable
  double bias = 0.0;
  double coverage = 0.0;
  double rejection = 0.0;  // FRT rejection when enabled, else asymptotic
  int n_rep = 0;
  int n_fail = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> scenario_seeds;
};

extern const std::vector<std::string> kAllMethods;

// Runs each method over n_rep generated trials per scenario and aggregates
// squared error, coverage, and rejection at alpha. Method failures are
// counted per cell, never silently dropped.
MetricsTable run_replications(const std::vector<Scenario>& scenarios,
                              const std::vector<std::string>& methods,
                              int n_rep, const FrtSimConfig& frt,
                              std::uint64_t seed, const SimOptions& options);

// Single-method dispatch used by the runner, the CLI, and the FRT statistic
// wiring. Throws on unknown method names.
TauEstimate run_method(const std::string& method, const StudyDataset& dataset,
                       const DesignPropensity& design, double alpha,
                       const CsbOptions& csb, std::uint64_t seed);

}  // namespace rsate
