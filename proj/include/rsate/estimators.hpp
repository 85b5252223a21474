// No-borrowing and full-borrowing RSATE estimators with closed-form
// asymptotic variance estimators and normal confidence intervals.
//
// All estimators are AIPW-style: an outcome regression evaluated everywhere
// plus an inverse-probability-weighted residual correction. The treatment
// propensity comes from the declared design and is never estimated; the
// sampling propensity (target-region membership) is fit by logistic
// regression when borrowing.

#pragma once

#include "rsate/estimates.hpp"
#include "rsate/models.hpp"

namespace rsate {

// Inverse-variance blend of the target-only rich-covariate prediction and
// the pooled shared-covariate prediction.
struct IvwPrediction {
  Eigen::VectorXd y_hat;  // length n; pooled prediction on auxiliary rows
  double w_nb = 0.5, w_fb = 0.5;
  double v_nb = 0.0, v_fb = 0.0;
};

// Arm-level pieces shared across estimators. `nu` holds the per-record raw
// summand (length n, zero off the rows the estimator touches), so that
// theta_hat = sum(nu) / n_target and psi-style contributions are nu/pi_R.
struct ArmParts {
  int arm = 0;
  double theta_hat = 0.0;
  Eigen::VectorXd nu;
  std::vector<std::string> flags;
};

// Sampling-propensity fit P(R=1 | X) on all rows; degenerates to a clipped
// constant when only one region is present (flagged).
struct SamplingFit {
  Eigen::VectorXd pi_hat;  // length n, clipped
  LogisticModelFit fit;
  bool degenerate = false;
};
SamplingFit fit_sampling_model(const StudyDataset& dataset,
                               double clip_eps = kDefaultClipEps);

ArmParts nb_arm_parts(const StudyDataset& dataset,
                      const DesignPropensity& design, int arm, bool use_u);

ArmParts fb_xonly_arm_parts(const StudyDataset& dataset,
                            const DesignPropensity& design, int arm,
                            const Eigen::VectorXd& pi_hat);

struct FbIvwArmParts {
  ArmParts parts;
  IvwPrediction ivw;
};
FbIvwArmParts fb_ivw_arm_parts(const StudyDataset& dataset,
                               const DesignPropensity& design, int arm,
                               const Eigen::VectorXd& pi_hat);

// Assembles a TauEstimate from arm parts: tau, psi contributions, influence
// vector, variance over the n_used rows actually entering the estimator,
// and the normal confidence interval.
TauEstimate assemble_tau(const StudyDataset& dataset, std::string method,
                         ArmParts theta1, ArmParts theta0, Eigen::Index n_used,
                         double alpha);

TauEstimate estimate_nb_xonly(const StudyDataset& dataset,
                              const DesignPropensity& design,
                              double alpha = 0.05);

TauEstimate estimate_nb_allcov(const StudyDataset& dataset,
                               const DesignPropensity& design,
                               double alpha = 0.05);

TauEstimate estimate_fb_xonly(const StudyDataset& dataset,
                              const DesignPropensity& design,
                              double alpha = 0.05,
                              double clip_eps = kDefaultClipEps);

// nb_fit must be trained on target arm rows with (X,U); fb_fit on pooled arm
// rows with X alone. Weights are v_fb : v_nb normalized; an exact 0/0 tie
// falls back to (0.5, 0.5).
IvwPrediction ivw_predictions(const StudyDataset& dataset, int arm,
                              const LinearModelFit& nb_fit,
                              const LinearModelFit& fb_fit);

TauEstimate estimate_fb_ivw(const StudyDataset& dataset,
                            const DesignPropensity& design,
                            double alpha = 0.05,
                            double clip_eps = kDefaultClipEps);

// Three-term rearrangement of the full-borrowing IVW arm estimator: a
// target-only term, a blended-prediction term, and an auxiliary residual
// term. Their sum reproduces the arm estimate exactly (tested identity).
struct AugmentationDecomposition {
  double target_term = 0.0;
  double blend_term = 0.0;
  double residual_term = 0.0;
  double total() const { return target_term + blend_term + residual_term; }
};
AugmentationDecomposition fb_ivw_arm_decomposition(
    const StudyDataset& dataset, const DesignPropensity& design, int arm,
    double clip_eps = kDefaultClipEps);

}  // namespace rsate
