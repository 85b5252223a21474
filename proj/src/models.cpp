#include "rsate/models.hpp"

#include <algorithm>
#include <stdexcept>

#include "rsate/rng.hpp"

namespace rsate {

namespace {

Eigen::MatrixXd with_intercept(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

double clip(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

}  // namespace

double LogisticModelFit::predict_one(
    const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  const double eta =
      coefficients[0] + x * coefficients.tail(coefficients.size() - 1);
  return clip(inverse_logit(eta), clip_eps);
}

LinearModelFit fit_linear(const Eigen::Ref<const Eigen::MatrixXd>& features,
                          const Eigen::Ref<const Eigen::VectorXd>& response,
                          std::vector<std::string> feature_names) {
  const Eigen::Index n = features.rows();
  const Eigen::Index p = features.cols();
  if (response.size() != n) {
    throw std::invalid_argument("fit_linear: response length != feature rows");
  }
  if (n < p + 1) {
    throw std::invalid_argument("fit_linear: need at least p+1 observations");
  }
  const Eigen::MatrixXd design = with_intercept(features);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
  LinearModelFit fit;
  fit.coefficients = cod.solve(response);
  fit.rank_deficient = cod.rank() < design.cols();
  fit.feature_names = std::move(feature_names);
  const double rss = (response - design * fit.coefficients).squaredNorm();
  fit.residual_mse = rss / static_cast<double>(n);
  return fit;
}

LogisticModelFit fit_logistic(const Eigen::Ref<const Eigen::MatrixXd>& features,
                              const Eigen::Ref<const Eigen::VectorXd>& labels,
                              int max_iter, double tol,
                              const Eigen::VectorXd* warm_start) {
  const Eigen::Index n = features.rows();
  const Eigen::Index p = features.cols();
  if (labels.size() != n) {
    throw std::invalid_argument("fit_logistic: label length != feature rows");
  }
  const double mean_label = labels.mean();
  if (!(mean_label > 0.0) || !(mean_label < 1.0)) {
    throw std::invalid_argument("fit_logistic: both label classes required");
  }

  LogisticModelFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  if (warm_start != nullptr && warm_start->size() == p + 1) {
    beta = *warm_start;
  } else {
    beta[0] = logit(mean_label);
  }

  const Eigen::MatrixXd design = with_intercept(features);
  Eigen::VectorXd eta(n), prob(n), w(n);
  Eigen::MatrixXd xtwx(p + 1, p + 1);
  Eigen::VectorXd score(p + 1);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int it = 1; it <= max_iter; ++it) {
    fit.iterations = it;
    eta.noalias() = design * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = inverse_logit(eta[i]);
      // log-likelihood in the numerically stable log1p form
      ll += labels[i] * eta[i] - (eta[i] > 30.0 ? eta[i] : std::log1p(std::exp(eta[i])));
      w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
    }
    score.noalias() = design.transpose() * (labels - prob);
    xtwx.noalias() = design.transpose() * w.asDiagonal() * design;
    const Eigen::VectorXd delta =
        xtwx.completeOrthogonalDecomposition().solve(score);
    beta += delta;
    const double step = delta.cwiseAbs().maxCoeff();
    if (step < tol || std::abs(ll - prev_ll) < tol) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;
  }
  // Separation: the likelihood plateaus while coefficients diverge, so the
  // stopping rules above can fire spuriously. When every observation sits in
  // a saturated tail of the link the fit is separated, not converged.
  eta.noalias() = design * beta;
  if (eta.cwiseAbs().minCoeff() > 12.0) fit.converged = false;
  fit.coefficients = std::move(beta);
  return fit;
}

Eigen::VectorXd predict(const LinearModelFit& fit,
                        const Eigen::Ref<const Eigen::MatrixXd>& features) {
  if (features.cols() + 1 != fit.coefficients.size()) {
    throw std::invalid_argument("predict: feature width does not match fit");
  }
  return Eigen::VectorXd::Constant(features.rows(), fit.coefficients[0]) +
         features * fit.coefficients.tail(features.cols());
}

Eigen::VectorXd predict(const LogisticModelFit& fit,
                        const Eigen::Ref<const Eigen::MatrixXd>& features) {
  if (features.cols() + 1 != fit.coefficients.size()) {
    throw std::invalid_argument("predict: feature width does not match fit");
  }
  Eigen::VectorXd eta =
      Eigen::VectorXd::Constant(features.rows(), fit.coefficients[0]) +
      features * fit.coefficients.tail(features.cols());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    eta[i] = clip(inverse_logit(eta[i]), fit.clip_eps);
  }
  return eta;
}

FoldAssignment kfold_split(const std::vector<int>& indices, int K,
                           std::uint64_t seed) {
  if (K < 2) throw std::invalid_argument("kfold_split: K must be >= 2");
  if (static_cast<std::size_t>(K) > indices.size()) {
    throw std::invalid_argument("kfold_split: K exceeds index count");
  }
  std::vector<int> shuffled = indices;
  Rng rng(derive_seed(seed, {streams::kFolds}));
  rng.shuffle(shuffled);
  FoldAssignment out;
  out.K = K;
  out.seed = seed;
  out.fold_of.reserve(shuffled.size());
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    out.fold_of[shuffled[i]] = static_cast<int>(i % K) + 1;
  }
  return out;
}

}  // namespace rsate
