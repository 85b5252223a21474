#include <doctest.h>

#include <atomic>
#include <cmath>

#include "rsate/multiregion.hpp"
#include "rsate/parallel.hpp"
#include "rsate/sim.hpp"
#include "test_helpers.hpp"

using namespace rsate;

namespace {

const DesignPropensity kDesign = DesignPropensity::constant(0.5);

// Region membership independent of covariates, so region-specific
// exchangeability holds for any shared subset.
DgpConfig uniform_sampling_dgp(int regions) {
  DgpConfig c;
  c.n_target = 120;
  c.n_aux = 240;
  c.rho = 0.0;
  c.eta1 = Eigen::Vector2d(0.0, 0.0);
  c.eta0 = Eigen::Vector2d(0.0, 0.0);
  c.offset1 = 0.0;
  c.offset0 = 0.0;
  c.aux_region_count = regions;
  return c;
}

Eigen::Matrix2d random_spd(Rng& rng) {
  Eigen::Matrix2d a;
  a << rng.normal(), rng.normal(), rng.normal(), rng.normal();
  Eigen::Matrix2d s = a * a.transpose();
  s += 0.05 * Eigen::Matrix2d::Identity();
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("multiregion");

TEST_CASE("optimal_weights closed forms") {
  Eigen::MatrixXd sigma(2, 2);
  SUBCASE("identity splits evenly") {
    sigma << 1, 0, 0, 1;
    const Eigen::VectorXd w = optimal_weights(sigma);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));
  }
  SUBCASE("diag(1,3) weights 3:1") {
    sigma << 1, 0, 0, 3;
    const Eigen::VectorXd w = optimal_weights(sigma);
    CHECK(w[0] == doctest::Approx(0.75));
    CHECK(w[1] == doctest::Approx(0.25));
  }
  SUBCASE("exchangeable correlation splits evenly") {
    sigma << 1, 0.5, 0.5, 1;
    const Eigen::VectorXd w = optimal_weights(sigma);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));
  }
}

TEST_CASE("optimal_weights matches the hand-solved 2x2 formula") {
  Rng rng(19);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Matrix2d sigma = random_spd(rng);
    const Eigen::VectorXd w = optimal_weights(sigma);
    // d = Sigma^-1 1 normalized, written out for the 2x2 case.
    const double a = sigma(0, 0), b = sigma(0, 1), c = sigma(1, 1);
    const double raw0 = c - b, raw1 = a - b;
    const double w0 = raw0 / (raw0 + raw1);
    CHECK(w[0] == doctest::Approx(w0).epsilon(1e-8));
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("optimal_weights scale invariance and ridge fallback") {
  Rng rng(20);
  const Eigen::Matrix2d sigma = random_spd(rng);
  const Eigen::VectorXd w1 = optimal_weights(sigma);
  const Eigen::VectorXd w2 = optimal_weights(7.5 * sigma);
  CHECK((w1 - w2).cwiseAbs().maxCoeff() < 1e-10);

  Eigen::MatrixXd singular(2, 2);
  singular << 1, 1, 1, 1;
  std::vector<std::string> flags;
  const Eigen::VectorXd w = optimal_weights(singular, &flags);
  CHECK(w.sum() == doctest::Approx(1.0));
  REQUIRE_FALSE(flags.empty());
  CHECK(flags[0].find("ridge") != std::string::npos);
}

TEST_CASE("combined variance never exceeds any single region") {
  Rng rng(21);
  for (int k = 0; k < 50; ++k) {
    const Eigen::Matrix2d sigma = random_spd(rng);
    const Eigen::VectorXd w = optimal_weights(sigma);
    const double combined = w.dot(sigma * w);
    CHECK(combined <= sigma(0, 0) + 1e-10);
    CHECK(combined <= sigma(1, 1) + 1e-10);
  }
}

TEST_CASE("influence_covariance structure") {
  Eigen::VectorXd v(4);
  v << 1, -1, 2, 0;
  SUBCASE("identical vectors give a constant matrix") {
    const Eigen::MatrixXd s = influence_covariance({v, v}, 4);
    CHECK(s(0, 0) == doctest::Approx(s(0, 1)));
    CHECK(s(0, 0) == doctest::Approx(s(1, 1)));
    CHECK(s(0, 0) == doctest::Approx(v.squaredNorm() / 4.0));
  }
  SUBCASE("orthogonal vectors have zero cross terms") {
    Eigen::VectorXd u(4);
    u << 0, 0, 0, 3;  // orthogonal to (1,-1,2,0)
    const Eigen::MatrixXd s = influence_covariance({v, u}, 4);
    CHECK(std::abs(s(0, 1)) < 1e-10);
  }
  SUBCASE("length mismatch is an error") {
    CHECK_THROWS_AS(influence_covariance({v, Eigen::VectorXd::Zero(3)}, 4),
                    std::invalid_argument);
  }
}

TEST_CASE("single-region reduction and variance cross-check") {
  const GeneratedTrial t = generate_trial(uniform_sampling_dgp(1), 23);
  const std::vector<std::string> shared = {"X1", "X2"};
  const TauEstimate regional =
      estimate_fb_ivw_region(t.data, kDesign, 0, shared);
  const TauEstimate direct = estimate_fb_ivw(t.data, kDesign);
  CHECK(regional.tau_hat == doctest::Approx(direct.tau_hat).epsilon(1e-10));

  const Eigen::MatrixXd sigma =
      influence_covariance({regional.influence}, t.data.n());
  // Sigma[0,0]/n equals the squared asymptotic standard error.
  CHECK(sigma(0, 0) / static_cast<double>(t.data.n()) ==
        doctest::Approx(direct.se * direct.se).epsilon(1e-8));
}

TEST_CASE("region estimates ignore rows from other regions") {
  const GeneratedTrial t = generate_trial(uniform_sampling_dgp(2), 24);
  const std::vector<std::string> shared = {"X1"};
  const TauEstimate with_all =
      estimate_fb_ivw_region(t.data, kDesign, 2, shared);

  std::vector<TrialRecord> records;
  std::vector<int> kept;
  for (Eigen::Index i = 0; i < t.data.n(); ++i) {
    if (t.data.region[i] == kTargetRegion || t.data.region[i] == 2) {
      records.push_back(t.data.record(i));
      kept.push_back(static_cast<int>(i));
    }
  }
  const StudyDataset dropped =
      StudyDataset::from_records(t.data.schema, records);
  const TauEstimate without =
      estimate_fb_ivw_region(dropped, kDesign, 2, shared);
  CHECK(with_all.tau_hat == doctest::Approx(without.tau_hat).epsilon(1e-10));
  CHECK(with_all.se == doctest::Approx(without.se).epsilon(1e-10));

  CHECK_THROWS_AS(estimate_fb_ivw_region(t.data, kDesign, 9, shared),
                  std::invalid_argument);
}

TEST_CASE("empty shared subset stays finite and is flagged") {
  const GeneratedTrial t = generate_trial(uniform_sampling_dgp(1), 25);
  const TauEstimate est = estimate_fb_ivw_region(t.data, kDesign, 0, {});
  CHECK(std::isfinite(est.tau_hat));
  CHECK(std::isfinite(est.se));
  bool flagged = false;
  for (const auto& f : est.flags) flagged |= f.find("empty shared") != std::string::npos;
  CHECK(flagged);
}

TEST_CASE("region-specific estimates are unbiased across 300 replicates") {
  DgpConfig config = uniform_sampling_dgp(2);
  const McValue tau = true_rsate(config, 200000, 26);
  RegionCovariateMap map;
  map.shared_of[2] = {"X1"};
  map.shared_of[3] = {"X2"};
  const int reps = 300;
  std::vector<double> t2(reps), t3(reps), combined(reps);
  parallel_for(reps, 0, [&](std::size_t r) {
    const GeneratedTrial t = generate_trial(
        config, derive_seed(27, {static_cast<std::uint64_t>(r)}));
    const RegionEstimates est = estimate_all_regions(t.data, kDesign, map);
    t2[r] = est.tau_hats[0];
    t3[r] = est.tau_hats[1];
    combined[r] = combine(est).tau_hat;
  });
  auto summarize = [&](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= (v.size() - 1);
    return std::pair<double, double>{mean, var};
  };
  const auto [m2, v2] = summarize(t2);
  const auto [m3, v3] = summarize(t3);
  const auto [mc, vc] = summarize(combined);
  CHECK(std::abs(m2 - tau.value) < 3.0 * std::sqrt(v2 / reps));
  CHECK(std::abs(m3 - tau.value) < 3.0 * std::sqrt(v3 / reps));
  // Empirical optimality of the inverse-variance combination.
  CHECK(vc <= 1.05 * std::min(v2, v3));
}

TEST_CASE("combine degenerate and convex cases") {
  RegionEstimates est;
  est.labels = {2};
  est.tau_hats = Eigen::VectorXd::Constant(1, 1.7);
  est.theta1s = Eigen::VectorXd::Constant(1, 2.0);
  est.theta0s = Eigen::VectorXd::Constant(1, 0.3);
  est.sigma_hat = Eigen::MatrixXd::Constant(1, 1, 4.0);
  est.weights = Eigen::VectorXd::Constant(1, 1.0);
  est.n = 100;
  est.alpha = 0.05;
  const TauEstimate single = combine(est);
  CHECK(single.tau_hat == doctest::Approx(1.7));
  CHECK(single.se == doctest::Approx(std::sqrt(4.0 / 100.0)));

  RegionEstimates equal;
  equal.labels = {2, 3};
  equal.tau_hats = Eigen::VectorXd::Constant(2, 0.9);
  equal.theta1s = Eigen::VectorXd::Constant(2, 1.0);
  equal.theta0s = Eigen::VectorXd::Constant(2, 0.1);
  equal.sigma_hat = Eigen::MatrixXd::Identity(2, 2);
  equal.weights = optimal_weights(equal.sigma_hat);
  equal.n = 50;
  CHECK(combine(equal).tau_hat == doctest::Approx(0.9));
}

TEST_CASE("select_by_region matches full borrowing when regions are clean") {
  DgpConfig config = uniform_sampling_dgp(2);
  const McValue tau = true_rsate(config, 200000, 28);
  RegionCovariateMap map;
  map.shared_of[2] = {"X1", "X2"};
  map.shared_of[3] = {"X2"};
  const int reps = 200;
  std::vector<double> err_sel(reps), err_fb(reps);
  parallel_for(reps, 0, [&](std::size_t r) {
    const std::uint64_t s = derive_seed(29, {static_cast<std::uint64_t>(r)});
    const GeneratedTrial t = generate_trial(config, s);
    CsbOptions opts;
    opts.L = 50;
    opts.seed = derive_seed(s, {1});
    err_sel[r] =
        select_by_region(t.data, kDesign, map, opts).tau_hat - tau.value;
    err_fb[r] =
        combine(estimate_all_regions(t.data, kDesign, map)).tau_hat - tau.value;
  });
  auto mse = [&](const std::vector<double>& e) {
    double acc = 0.0;
    for (double v : e) acc += v * v;
    return acc / e.size();
  };
  CHECK(mse(err_sel) <= 1.1 * mse(err_fb));
}

TEST_CASE("select_by_region screens out a fully biased region") {
  DgpConfig config = uniform_sampling_dgp(2);
  config.rho = 1.0;
  config.b0 = 8.0;
  config.b1 = 8.0;
  RegionCovariateMap map;
  map.shared_of[2] = {"X1", "X2"};
  map.shared_of[3] = {"X1", "X2"};
  const int reps = 200;
  std::vector<double> biased_frac(reps, 0.0), clean_frac(reps, 0.0);
  parallel_for(reps, 0, [&](std::size_t r) {
    const std::uint64_t s = derive_seed(30, {static_cast<std::uint64_t>(r)});
    // Region 2 inherits the generator's bias; region 3 is cleaned by hand.
    GeneratedTrial t = generate_trial(config, s);
    Rng noise(derive_seed(s, {5}));
    for (Eigen::Index i = 0; i < t.data.n(); ++i) {
      if (t.data.region[i] == 3 && t.biased[static_cast<std::size_t>(i)]) {
        const int arm = t.data.treatment[i];
        t.data.outcome[i] += config.bias_for_arm(arm);  // undo the shift
        t.biased[static_cast<std::size_t>(i)] = 0;
        (void)noise;
      }
    }
    CsbOptions opts;
    opts.L = 50;
    opts.seed = derive_seed(s, {1});
    const TauEstimate est = select_by_region(t.data, kDesign, map, opts);
    int biased_total = 0, clean_total = 0, biased_sel = 0, clean_sel = 0;
    for (Eigen::Index i = 0; i < t.data.n(); ++i) {
      if (t.data.region[i] == 2) ++biased_total;
      if (t.data.region[i] == 3) ++clean_total;
    }
    for (int arm : {0, 1}) {
      for (int idx : est.borrowed_indices[arm]) {
        if (t.data.region[idx] == 2) ++biased_sel;
        if (t.data.region[idx] == 3) ++clean_sel;
      }
    }
    biased_frac[r] = static_cast<double>(biased_sel) / biased_total;
    clean_frac[r] = static_cast<double>(clean_sel) / clean_total;
  });
  double mean_biased = 0.0;
  for (double f : biased_frac) mean_biased += f;
  mean_biased /= reps;
  CHECK(mean_biased <= 0.20);
}

TEST_CASE("select_by_region is deterministic under a fixed seed") {
  const GeneratedTrial t = generate_trial(uniform_sampling_dgp(2), 31);
  RegionCovariateMap map;
  map.shared_of[2] = {"X1"};
  map.shared_of[3] = {"X2"};
  CsbOptions opts;
  opts.L = 20;
  opts.seed = 31;
  const TauEstimate a = select_by_region(t.data, kDesign, map, opts);
  const TauEstimate b = select_by_region(t.data, kDesign, map, opts);
  CHECK(a.tau_hat == b.tau_hat);
  CHECK(a.se == b.se);
  CHECK(a.borrowed_indices[0] == b.borrowed_indices[0]);
  CHECK(a.borrowed_indices[1] == b.borrowed_indices[1]);
}

TEST_SUITE_END();
