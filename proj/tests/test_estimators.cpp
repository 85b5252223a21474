#include <doctest.h>

#include <cmath>
#include <functional>

#include "rsate/estimators.hpp"
#include "rsate/sim.hpp"
#include "test_helpers.hpp"

using namespace rsate;

namespace {

const DesignPropensity kDesign = DesignPropensity::constant(0.5);

struct McSummary {
  double mean = 0.0;
  double mse = 0.0;
  double mc_se = 0.0;
};

McSummary mc_study(const DgpConfig& config, int reps, std::uint64_t seed,
                   double tau_true,
                   const std::function<double(const StudyDataset&)>& run) {
  McSummary s;
  double sum = 0.0, sumsq = 0.0, err2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const GeneratedTrial t =
        generate_trial(config, derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    const double tau_hat = run(t.data);
    sum += tau_hat;
    sumsq += tau_hat * tau_hat;
    const double e = tau_hat - tau_true;
    err2 += e * e;
  }
  s.mean = sum / reps;
  s.mse = err2 / reps;
  const double var = (sumsq - reps * s.mean * s.mean) / (reps - 1);
  s.mc_se = std::sqrt(std::max(var, 0.0) / reps);
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("estimators");

TEST_CASE("NB estimators collapse to arm means under a saturated fit") {
  // Constant covariate, e = 0.5: the AIPW terms cancel and theta_a is the
  // target arm mean.
  const StudyDataset d = testing::make_dataset(
      1, 0,
      {{1, 2.0, 0.0}, {1, 4.0, 0.0}, {0, 0.0, 0.0}, {0, 2.0, 0.0}}, {});
  const TauEstimate est = estimate_nb_xonly(d, kDesign);
  CHECK(est.tau_hat == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(est.theta1.theta_hat == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(est.theta0.theta_hat == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("NB estimators: identical outcomes give tau = 0") {
  const StudyDataset d = testing::make_dataset(
      1, 1,
      {{1, 7.0, 0.3, 0.1}, {1, 7.0, -0.4, 0.2}, {0, 7.0, 0.8, 0.3},
       {0, 7.0, 0.2, 0.4}},
      {});
  CHECK(estimate_nb_xonly(d, kDesign).tau_hat == doctest::Approx(0.0));
  CHECK(estimate_nb_allcov(d, kDesign).tau_hat == doctest::Approx(0.0));
}

TEST_CASE("NB-AllCov equals NB-Xonly when the U column is identically zero") {
  StudyDataset d = testing::random_dataset(5, 40, 0);
  d.u.setZero();
  const double allcov = estimate_nb_allcov(d, kDesign).tau_hat;
  const double xonly = estimate_nb_xonly(d, kDesign).tau_hat;
  CHECK(allcov == doctest::Approx(xonly).epsilon(1e-8));
}

TEST_CASE("NB-AllCov covers a sharp-null dataset") {
  // Y(0) = Y(1) by construction: outcomes ignore treatment.
  std::vector<std::vector<double>> target;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    const double x = rng.normal(), u = rng.normal();
    target.push_back({static_cast<double>(i % 2), 1.0 + x - u + rng.normal(),
                      x, u});
  }
  const StudyDataset d = testing::make_dataset(1, 1, target, {});
  const TauEstimate est = estimate_nb_allcov(d, kDesign);
  CHECK(std::abs(est.tau_hat) <= est.ci_upper - est.tau_hat);
}

TEST_CASE("NB-Xonly is unbiased with oracle-correct models") {
  DgpConfig config;
  config.n_target = 200;
  config.n_aux = 100;
  config.rho = 0.0;
  const McValue tau = true_rsate(config, 200000, 5);
  const McSummary s =
      mc_study(config, 500, 51, tau.value, [](const StudyDataset& d) {
        return estimate_nb_xonly(d, kDesign).tau_hat;
      });
  CHECK(std::abs(s.mean - tau.value) < 3.0 * s.mc_se);
}

TEST_CASE("FB-Xonly with no auxiliary rows reduces to the NB structure") {
  const StudyDataset d = testing::random_dataset(9, 30, 0);
  const TauEstimate fb = estimate_fb_xonly(d, kDesign);
  bool flagged = false;
  for (const auto& f : fb.flags) flagged |= f.find("degenerate") != std::string::npos;
  CHECK(flagged);
  // OLS residuals sum to zero within each fitted arm, so the weighted
  // correction vanishes and the estimate matches NB-Xonly exactly.
  CHECK(fb.tau_hat ==
        doctest::Approx(estimate_nb_xonly(d, kDesign).tau_hat).epsilon(1e-10));
}

TEST_CASE("FB-Xonly: no-drift borrowing helps and stays unbiased") {
  DgpConfig config;
  config.n_target = 150;
  config.n_aux = 250;
  config.rho = 0.0;
  const McValue tau = true_rsate(config, 200000, 6);
  const McSummary nb =
      mc_study(config, 500, 61, tau.value, [](const StudyDataset& d) {
        return estimate_nb_xonly(d, kDesign).tau_hat;
      });
  const McSummary fb =
      mc_study(config, 500, 61, tau.value, [](const StudyDataset& d) {
        return estimate_fb_xonly(d, kDesign).tau_hat;
      });
  CHECK(std::abs(fb.mean - tau.value) < 3.0 * fb.mc_se);
  CHECK(fb.mse <= nb.mse);
}

TEST_CASE("FB-Xonly double robustness: exact outcome model, crude sampling model") {
  // The DGP's true sampling odds are not logistic-linear, so pi_hat is
  // misspecified; the exactly linear outcome model keeps the estimator
  // unbiased.
  DgpConfig config;
  config.n_target = 150;
  config.n_aux = 250;
  config.rho = 0.0;
  config.eta1 = Eigen::Vector2d(1.2, -0.8);
  config.eta0 = Eigen::Vector2d(-0.9, 0.7);
  const McValue tau = true_rsate(config, 200000, 7);
  const McSummary fb =
      mc_study(config, 500, 71, tau.value, [](const StudyDataset& d) {
        return estimate_fb_xonly(d, kDesign).tau_hat;
      });
  CHECK(std::abs(fb.mean - tau.value) < 3.0 * fb.mc_se);
}

TEST_CASE("ivw_predictions weighting rules") {
  const StudyDataset d = testing::make_dataset(
      1, 1, {{1, 1.0, 0.5, 0.2}, {1, -1.0, -0.5, 0.1}},
      {{1, 1.0, 0.3}, {1, -1.0, -0.3}});
  LinearModelFit zero_nb, zero_fb;
  zero_nb.coefficients = Eigen::VectorXd::Zero(3);  // intercept + x + u
  zero_fb.coefficients = Eigen::VectorXd::Zero(2);  // intercept + x

  SUBCASE("equal error variances split the weights") {
    const IvwPrediction p = ivw_predictions(d, 1, zero_nb, zero_fb);
    CHECK(p.v_nb == doctest::Approx(1.0));
    CHECK(p.v_fb == doctest::Approx(1.0));
    CHECK(p.w_nb == doctest::Approx(0.5));
    CHECK(p.w_nb + p.w_fb == 1.0);
  }
  SUBCASE("exact target fit puts full weight on the rich model") {
    LinearModelFit exact_nb;  // y = 2x exactly on target rows
    exact_nb.coefficients = Eigen::VectorXd::Zero(3);
    exact_nb.coefficients[1] = 2.0;
    const IvwPrediction p = ivw_predictions(d, 1, exact_nb, zero_fb);
    CHECK(p.v_nb == doctest::Approx(0.0));
    CHECK(p.w_nb == doctest::Approx(1.0));
    for (int i : d.target_rows) {
      CHECK(p.y_hat[i] == doctest::Approx(2.0 * d.x(i, 0)));
    }
  }
  SUBCASE("auxiliary rows always take the pooled prediction") {
    LinearModelFit fb;
    fb.coefficients = Eigen::Vector2d(0.7, 1.3);
    const IvwPrediction p = ivw_predictions(d, 1, zero_nb, fb);
    for (int i : d.aux_rows) {
      CHECK(p.y_hat[i] == doctest::Approx(0.7 + 1.3 * d.x(i, 0)));
    }
  }
  SUBCASE("both variances zero fall back to the tie rule") {
    const StudyDataset z = testing::make_dataset(
        1, 1, {{1, 0.0, 0.5, 0.2}, {1, 0.0, -0.5, 0.1}}, {{1, 0.0, 0.3}});
    const IvwPrediction p = ivw_predictions(z, 1, zero_nb, zero_fb);
    CHECK(p.w_nb == doctest::Approx(0.5));
  }
}

TEST_CASE("FB-IVW equals FB-Xonly on noise-free common-line data") {
  // All outcomes sit exactly on one line in X and U is identically zero, so
  // both prediction routes coincide and the blend is irrelevant.
  std::vector<std::vector<double>> target, aux;
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const double x = rng.normal();
    target.push_back({static_cast<double>(i % 2), 1.0 + 2.0 * x, x, 0.0});
  }
  for (int i = 0; i < 30; ++i) {
    const double x = rng.normal(0.5, 1.0);
    aux.push_back({static_cast<double>(i % 2), 1.0 + 2.0 * x, x});
  }
  const StudyDataset d = testing::make_dataset(1, 1, target, aux);
  CHECK(estimate_fb_ivw(d, kDesign).tau_hat ==
        doctest::Approx(estimate_fb_xonly(d, kDesign).tau_hat).epsilon(1e-8));
}

TEST_CASE("FB-IVW three-term decomposition is an exact identity") {
  const StudyDataset d = testing::random_dataset(12, 40, 60, 0.8);
  const TauEstimate est = estimate_fb_ivw(d, kDesign);
  for (int arm : {0, 1}) {
    const AugmentationDecomposition dec =
        fb_ivw_arm_decomposition(d, kDesign, arm);
    const double theta =
        arm == 1 ? est.theta1.theta_hat : est.theta0.theta_hat;
    CHECK(dec.total() == doctest::Approx(theta).epsilon(1e-10));
  }
}

TEST_CASE("FB-IVW exploits U under high U-signal") {
  DgpConfig config;
  config.n_target = 150;
  config.n_aux = 250;
  config.rho = 0.0;
  config.with_alpha(1.5);
  const McValue tau = true_rsate(config, 200000, 9);
  const McSummary xonly =
      mc_study(config, 500, 91, tau.value, [](const StudyDataset& d) {
        return estimate_fb_xonly(d, kDesign).tau_hat;
      });
  const McSummary ivw =
      mc_study(config, 500, 91, tau.value, [](const StudyDataset& d) {
        return estimate_fb_ivw(d, kDesign).tau_hat;
      });
  CHECK(ivw.mse <= xonly.mse);
}

TEST_CASE("confidence_interval quantiles") {
  SUBCASE("degenerate variance") {
    const auto [lo, hi] = confidence_interval(1.5, 0.0, 100, 0.05);
    CHECK(lo == 1.5);
    CHECK(hi == 1.5);
  }
  SUBCASE("standard normal half-width") {
    const auto [lo, hi] = confidence_interval(0.0, 1.0, 1, 0.05);
    CHECK(hi == doctest::Approx(1.959964).epsilon(1e-5));
  }
  SUBCASE("alpha = 0.32 is about one sigma") {
    const auto [lo, hi] = confidence_interval(0.0, 4.0, 1, 0.32);
    CHECK(hi == doctest::Approx(2.0).epsilon(0.01));
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(confidence_interval(0.0, -1.0, 10, 0.05),
                    std::invalid_argument);
    CHECK_THROWS_AS(confidence_interval(0.0, 1.0, 10, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("arm contributions average to theta_hat") {
  const StudyDataset d = testing::random_dataset(13, 30, 50, 0.5);
  for (const TauEstimate& est :
       {estimate_nb_xonly(d, kDesign), estimate_nb_allcov(d, kDesign),
        estimate_fb_xonly(d, kDesign), estimate_fb_ivw(d, kDesign)}) {
    for (const ArmEstimate* arm : {&est.theta1, &est.theta0}) {
      CHECK(arm->contributions.mean() ==
            doctest::Approx(arm->theta_hat).epsilon(1e-10));
    }
  }
}

TEST_CASE("translation equivariance and permutation invariance") {
  const StudyDataset d = testing::random_dataset(14, 25, 40, -0.5);
  using Estimator = std::function<TauEstimate(const StudyDataset&)>;
  const std::vector<Estimator> estimators = {
      [](const StudyDataset& x) { return estimate_nb_xonly(x, kDesign); },
      [](const StudyDataset& x) { return estimate_nb_allcov(x, kDesign); },
      [](const StudyDataset& x) { return estimate_fb_xonly(x, kDesign); },
      [](const StudyDataset& x) { return estimate_fb_ivw(x, kDesign); }};

  StudyDataset shifted = d;
  shifted.outcome.array() += 11.0;
  std::vector<TrialRecord> records;
  Rng rng(15);
  std::vector<int> order(static_cast<std::size_t>(d.n()));
  for (Eigen::Index i = 0; i < d.n(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  for (int i : order) records.push_back(d.record(i));
  const StudyDataset shuffled = StudyDataset::from_records(d.schema, records);

  for (const auto& estimator : estimators) {
    const TauEstimate base = estimator(d);
    const TauEstimate shift = estimator(shifted);
    CHECK(shift.theta1.theta_hat ==
          doctest::Approx(base.theta1.theta_hat + 11.0).epsilon(1e-8));
    CHECK(shift.tau_hat == doctest::Approx(base.tau_hat).epsilon(1e-8));
    const TauEstimate perm = estimator(shuffled);
    CHECK(perm.tau_hat == doctest::Approx(base.tau_hat).epsilon(1e-10));
    CHECK(perm.se == doctest::Approx(base.se).epsilon(1e-8));
  }
}

TEST_SUITE_END();
