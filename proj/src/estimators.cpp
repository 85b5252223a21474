#include "rsate/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include "rsate/matrix_util.hpp"

namespace rsate {

namespace {

std::vector<int> arm_rows(const StudyDataset& d, int arm, bool target_only) {
  std::vector<int> rows;
  const auto& source = target_only ? d.target_rows : d.aux_rows;
  if (target_only) {
    for (int i : source) {
      if (d.treatment[i] == arm) rows.push_back(i);
    }
  } else {
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      if (d.treatment[i] == arm) rows.push_back(static_cast<int>(i));
    }
  }
  return rows;
}

// Intercept-only fallback keeps degenerate fitting subsets usable.
LinearModelFit fit_linear_safe(const Eigen::MatrixXd& features,
                               const Eigen::VectorXd& response,
                               std::vector<std::string>* flags,
                               const std::string& label) {
  if (response.size() >= features.cols() + 1) {
    return fit_linear(features, response);
  }
  if (flags != nullptr) {
    flags->push_back(label + ": too few rows, intercept-only fit");
  }
  LinearModelFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(features.cols() + 1);
  fit.coefficients[0] = response.size() > 0 ? response.mean() : 0.0;
  const double rss =
      (response.array() - fit.coefficients[0]).matrix().squaredNorm();
  fit.residual_mse =
      response.size() > 0 ? rss / static_cast<double>(response.size()) : 0.0;
  return fit;
}

}  // namespace

SamplingFit fit_sampling_model(const StudyDataset& dataset, double clip_eps) {
  SamplingFit out;
  if (dataset.n_aux == 0 || dataset.n_target == 0) {
    out.degenerate = true;
    const double p = dataset.n_aux == 0 ? 1.0 - clip_eps : clip_eps;
    out.pi_hat = Eigen::VectorXd::Constant(dataset.n(), p);
    out.fit.converged = false;
    out.fit.clip_eps = clip_eps;
    out.fit.coefficients = Eigen::VectorXd::Zero(dataset.x.cols() + 1);
    out.fit.coefficients[0] = logit(p);
    return out;
  }
  Eigen::VectorXd labels(dataset.n());
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    labels[i] = dataset.is_target(i) ? 1.0 : 0.0;
  }
  out.fit = fit_logistic(dataset.x, labels);
  out.fit.clip_eps = clip_eps;
  out.pi_hat = predict(out.fit, dataset.x);
  return out;
}

ArmParts nb_arm_parts(const StudyDataset& dataset,
                      const DesignPropensity& design, int arm, bool use_u) {
  const std::vector<int> rows_ta = arm_rows(dataset, arm, /*target_only=*/true);
  if (rows_ta.empty()) {
    throw std::invalid_argument("no-borrowing estimator: empty target arm " +
                                std::to_string(arm));
  }
  ArmParts out;
  out.arm = arm;
  const Eigen::MatrixXd features = use_u ? gather_xu(dataset, rows_ta)
                                         : gather_rows(dataset.x, rows_ta);
  const LinearModelFit mu = fit_linear_safe(
      features, gather(dataset.outcome, rows_ta), &out.flags,
      use_u ? "mu_nb(x,u) arm " + std::to_string(arm)
            : "mu_nb(x) arm " + std::to_string(arm));
  if (mu.rank_deficient) {
    out.flags.push_back("mu_nb arm " + std::to_string(arm) +
                        ": rank-deficient design (pseudo-inverse)");
  }

  out.nu = Eigen::VectorXd::Zero(dataset.n());
  double total = 0.0;
  for (int i : dataset.target_rows) {
    double pred;
    if (use_u) {
      Eigen::RowVectorXd xu(dataset.x.cols() + dataset.u.cols());
      xu.head(dataset.x.cols()) = dataset.x.row(i);
      xu.tail(dataset.u.cols()) = dataset.u.row(i);
      pred = mu.predict_one(xu);
    } else {
      pred = mu.predict_one(dataset.x.row(i));
    }
    double v = pred;
    if (dataset.treatment[i] == arm) {
      v += (dataset.outcome[i] - pred) / design.e(dataset, i, arm);
    }
    out.nu[i] = v;
    total += v;
  }
  out.theta_hat = total / static_cast<double>(dataset.n_target);
  return out;
}

ArmParts fb_xonly_arm_parts(const StudyDataset& dataset,
                            const DesignPropensity& design, int arm,
                            const Eigen::VectorXd& pi_hat) {
  const std::vector<int> rows_a = arm_rows(dataset, arm, /*target_only=*/false);
  if (rows_a.empty()) {
    throw std::invalid_argument("full-borrowing estimator: empty arm " +
                                std::to_string(arm));
  }
  ArmParts out;
  out.arm = arm;
  const LinearModelFit mu =
      fit_linear_safe(gather_rows(dataset.x, rows_a),
                      gather(dataset.outcome, rows_a), &out.flags,
                      "mu_fb(x) arm " + std::to_string(arm));
  if (mu.rank_deficient) {
    out.flags.push_back("mu_fb arm " + std::to_string(arm) +
                        ": rank-deficient design (pseudo-inverse)");
  }
  const Eigen::VectorXd mu_all = predict(mu, dataset.x);

  out.nu = Eigen::VectorXd::Zero(dataset.n());
  double total = 0.0;
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    double v = dataset.is_target(i) ? mu_all[i] : 0.0;
    if (dataset.treatment[i] == arm) {
      v += pi_hat[i] * (dataset.outcome[i] - mu_all[i]) /
           design.e(dataset, i, arm);
    }
    out.nu[i] = v;
    total += v;
  }
  out.theta_hat = total / static_cast<double>(dataset.n_target);
  return out;
}

IvwPrediction ivw_predictions(const StudyDataset& dataset, int arm,
                              const LinearModelFit& nb_fit,
                              const LinearModelFit& fb_fit) {
  const std::vector<int> rows_ta = arm_rows(dataset, arm, /*target_only=*/true);
  const std::vector<int> rows_a = arm_rows(dataset, arm, /*target_only=*/false);

  IvwPrediction out;
  double acc = 0.0;
  for (int i : rows_ta) {
    Eigen::RowVectorXd xu(dataset.x.cols() + dataset.u.cols());
    xu.head(dataset.x.cols()) = dataset.x.row(i);
    xu.tail(dataset.u.cols()) = dataset.u.row(i);
    const double r = dataset.outcome[i] - nb_fit.predict_one(xu);
    acc += r * r;
  }
  out.v_nb = rows_ta.empty() ? 0.0 : acc / static_cast<double>(rows_ta.size());

  acc = 0.0;
  for (int i : rows_a) {
    const double r = dataset.outcome[i] - fb_fit.predict_one(dataset.x.row(i));
    acc += r * r;
  }
  out.v_fb = rows_a.empty() ? 0.0 : acc / static_cast<double>(rows_a.size());

  if (out.v_nb + out.v_fb > 0.0) {
    out.w_nb = out.v_fb / (out.v_nb + out.v_fb);
  } else {
    out.w_nb = 0.5;  // tie rule
  }
  out.w_fb = 1.0 - out.w_nb;

  out.y_hat.resize(dataset.n());
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    const double fb = fb_fit.predict_one(dataset.x.row(i));
    if (dataset.is_target(i)) {
      Eigen::RowVectorXd xu(dataset.x.cols() + dataset.u.cols());
      xu.head(dataset.x.cols()) = dataset.x.row(i);
      xu.tail(dataset.u.cols()) = dataset.u.row(i);
      out.y_hat[i] = out.w_nb * nb_fit.predict_one(xu) + out.w_fb * fb;
    } else {
      out.y_hat[i] = fb;
    }
  }
  return out;
}

FbIvwArmParts fb_ivw_arm_parts(const StudyDataset& dataset,
                               const DesignPropensity& design, int arm,
                               const Eigen::VectorXd& pi_hat) {
  const std::vector<int> rows_ta = arm_rows(dataset, arm, /*target_only=*/true);
  const std::vector<int> rows_a = arm_rows(dataset, arm, /*target_only=*/false);
  if (rows_ta.empty()) {
    throw std::invalid_argument("IVW estimator: empty target arm " +
                                std::to_string(arm));
  }
  FbIvwArmParts out;
  out.parts.arm = arm;
  const LinearModelFit nb_fit = fit_linear_safe(
      gather_xu(dataset, rows_ta), gather(dataset.outcome, rows_ta),
      &out.parts.flags, "mu_nb(x,u) arm " + std::to_string(arm));
  const LinearModelFit fb_fit = fit_linear_safe(
      gather_rows(dataset.x, rows_a), gather(dataset.outcome, rows_a),
      &out.parts.flags, "mu_fb(x) arm " + std::to_string(arm));
  out.ivw = ivw_predictions(dataset, arm, nb_fit, fb_fit);

  out.parts.nu = Eigen::VectorXd::Zero(dataset.n());
  double total = 0.0;
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    double v = dataset.is_target(i) ? out.ivw.y_hat[i] : 0.0;
    if (dataset.treatment[i] == arm) {
      v += pi_hat[i] * (dataset.outcome[i] - out.ivw.y_hat[i]) /
           design.e(dataset, i, arm);
    }
    out.parts.nu[i] = v;
    total += v;
  }
  out.parts.theta_hat = total / static_cast<double>(dataset.n_target);
  return out;
}

TauEstimate assemble_tau(const StudyDataset& dataset, std::string method,
                         ArmParts theta1, ArmParts theta0, Eigen::Index n_used,
                         double alpha) {
  TauEstimate est;
  est.method = std::move(method);
  est.alpha = alpha;
  est.tau_hat = theta1.theta_hat - theta0.theta_hat;
  est.n_used = n_used;

  const double pi_r = static_cast<double>(dataset.n_target) /
                      static_cast<double>(n_used);
  est.influence.resize(dataset.n());
  double vsum = 0.0;
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    const double r = dataset.is_target(i) ? 1.0 : 0.0;
    est.influence[i] =
        (theta1.nu[i] - theta0.nu[i] - r * est.tau_hat) / pi_r;
    vsum += est.influence[i] * est.influence[i];
  }
  const double v_hat = vsum / static_cast<double>(n_used);
  est.se = std::sqrt(v_hat / static_cast<double>(n_used));
  std::tie(est.ci_lower, est.ci_upper) =
      confidence_interval(est.tau_hat, v_hat, n_used, alpha);

  for (auto* p : {&theta1, &theta0}) {
    ArmEstimate arm;
    arm.arm = p->arm;
    arm.theta_hat = p->theta_hat;
    arm.contributions = p->nu / pi_r;
    est.flags.insert(est.flags.end(), p->flags.begin(), p->flags.end());
    (p->arm == 1 ? est.theta1 : est.theta0) = std::move(arm);
  }
  return est;
}

TauEstimate estimate_nb_xonly(const StudyDataset& dataset,
                              const DesignPropensity& design, double alpha) {
  return assemble_tau(dataset, "NB-Xonly",
                      nb_arm_parts(dataset, design, 1, /*use_u=*/false),
                      nb_arm_parts(dataset, design, 0, /*use_u=*/false),
                      dataset.n(), alpha);
}

TauEstimate estimate_nb_allcov(const StudyDataset& dataset,
                               const DesignPropensity& design, double alpha) {
  return assemble_tau(dataset, "NB-AllCov",
                      nb_arm_parts(dataset, design, 1, /*use_u=*/true),
                      nb_arm_parts(dataset, design, 0, /*use_u=*/true),
                      dataset.n(), alpha);
}

TauEstimate estimate_fb_xonly(const StudyDataset& dataset,
                              const DesignPropensity& design, double alpha,
                              double clip_eps) {
  const SamplingFit sampling = fit_sampling_model(dataset, clip_eps);
  TauEstimate est = assemble_tau(
      dataset, "FB-Xonly",
      fb_xonly_arm_parts(dataset, design, 1, sampling.pi_hat),
      fb_xonly_arm_parts(dataset, design, 0, sampling.pi_hat), dataset.n(),
      alpha);
  if (sampling.degenerate) {
    est.flags.push_back("sampling model degenerate: single region");
  } else if (!sampling.fit.converged) {
    est.flags.push_back("sampling model did not converge");
  }
  return est;
}

TauEstimate estimate_fb_ivw(const StudyDataset& dataset,
                            const DesignPropensity& design, double alpha,
                            double clip_eps) {
  const SamplingFit sampling = fit_sampling_model(dataset, clip_eps);
  TauEstimate est = assemble_tau(
      dataset, "FB-IVW",
      fb_ivw_arm_parts(dataset, design, 1, sampling.pi_hat).parts,
      fb_ivw_arm_parts(dataset, design, 0, sampling.pi_hat).parts, dataset.n(),
      alpha);
  if (sampling.degenerate) {
    est.flags.push_back("sampling model degenerate: single region");
  } else if (!sampling.fit.converged) {
    est.flags.push_back("sampling model did not converge");
  }
  return est;
}

AugmentationDecomposition fb_ivw_arm_decomposition(const StudyDataset& dataset,
                                                   const DesignPropensity& design,
                                                   int arm, double clip_eps) {
  const SamplingFit sampling = fit_sampling_model(dataset, clip_eps);
  const FbIvwArmParts parts = fb_ivw_arm_parts(dataset, design, arm,
                                               sampling.pi_hat);
  AugmentationDecomposition d;
  const double n_r = static_cast<double>(dataset.n_target);
  for (Eigen::Index i = 0; i < dataset.n(); ++i) {
    const double w = dataset.treatment[i] == arm
                         ? sampling.pi_hat[i] / design.e(dataset, i, arm)
                         : 0.0;
    if (dataset.is_target(i)) {
      d.target_term += w * dataset.outcome[i];
      d.blend_term += (1.0 - w) * parts.ivw.y_hat[i];
    } else {
      d.residual_term += w * (dataset.outcome[i] - parts.ivw.y_hat[i]);
    }
  }
  d.target_term /= n_r;
  d.blend_term /= n_r;
  d.residual_term /= n_r;
  return d;
}

}  // namespace rsate
