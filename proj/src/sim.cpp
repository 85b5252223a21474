#include "rsate/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rsate/estimators.hpp"
#include "rsate/models.hpp"
#include "rsate/parallel.hpp"
#include "rsate/rng.hpp"

namespace rsate {

namespace {

using json = nlohmann::json;

Eigen::Matrix3d scenario_covariance(CovariateScenario s) {
  Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
  if (s == CovariateScenario::correlated) {
    cov(0, 2) = cov(2, 0) = 0.5;
    cov(1, 2) = cov(2, 1) = 0.5;
  }
  return cov;
}

struct CovariateSampler {
  Eigen::Vector3d mean{0.0, 0.0, 2.0};
  Eigen::Matrix3d chol;  // lower factor

  explicit CovariateSampler(CovariateScenario s)
      : chol(Eigen::LLT<Eigen::Matrix3d>(scenario_covariance(s)).matrixL()) {}

  Eigen::Vector3d draw(Rng& rng) const {
    Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
    return mean + chol * z;
  }
};

// pi(X) = pi_1(X) / (pi_1(X) + pi_0(X)).
double target_sampling_prob(const DgpConfig& c, double x1, double x2) {
  const double l1 = x1 * c.eta1[0] + x2 * c.eta1[1] + c.offset1;
  const double l0 = x1 * c.eta0[0] + x2 * c.eta0[1] + c.offset0;
  const double p1 = 1.0 / (1.0 + std::exp(l1));
  const double p0 = 1.0 / (1.0 + std::exp(l0));
  return p1 / (p1 + p0);
}

double outcome_mean(const Eigen::Vector3d& beta, double alpha_u, double x1,
                    double x2, double u) {
  return beta[0] + beta[1] * x1 + beta[2] * x2 + alpha_u * u;
}

}  // namespace

void DgpConfig::check() const {
  if (n_target < 2 || n_aux < 0) {
    throw std::invalid_argument("dgp: sample sizes invalid");
  }
  if (!(treat_p > 0.0 && treat_p < 1.0)) {
    throw std::invalid_argument("dgp: treat_p must lie in (0,1)");
  }
  if (!(eps > 0.0) || !(target_noise_var > 0.0)) {
    throw std::invalid_argument("dgp: noise variances must be positive");
  }
  if (rho < 0.0 || rho > 1.0) {
    throw std::invalid_argument("dgp: rho must lie in [0,1]");
  }
  if (aux_region_count < 1) {
    throw std::invalid_argument("dgp: aux_region_count must be >= 1");
  }
}

GeneratedTrial generate_trial(const DgpConfig& config, std::uint64_t seed) {
  config.check();
  Rng rng(derive_seed(seed, {streams::kDgp}));
  const CovariateSampler sampler(config.scenario);

  // Superpopulation stream: draw (X, U, R) until both region quotas fill.
  std::vector<Eigen::Vector3d> cov_target, cov_aux;
  cov_target.reserve(static_cast<std::size_t>(config.n_target));
  cov_aux.reserve(static_cast<std::size_t>(config.n_aux));
  while (static_cast<int>(cov_target.size()) < config.n_target ||
         static_cast<int>(cov_aux.size()) < config.n_aux) {
    const Eigen::Vector3d v = sampler.draw(rng);
    const bool in_target =
        rng.bernoulli(target_sampling_prob(config, v[0], v[1]));
    if (in_target) {
      if (static_cast<int>(cov_target.size()) < config.n_target) {
        cov_target.push_back(v);
      }
    } else if (static_cast<int>(cov_aux.size()) < config.n_aux) {
      cov_aux.push_back(v);
    }
  }

  const int n = config.n_target + config.n_aux;
  GeneratedTrial out;
  out.biased.assign(static_cast<std::size_t>(n), 0);
  StudyDataset& d = out.data;
  d.schema.shared_names = {"X1", "X2"};
  d.schema.target_only_names = {"U"};
  d.region.resize(n);
  d.treatment.resize(n);
  d.outcome.resize(n);
  d.x.resize(n, 2);
  d.u.resize(n, 1);
  d.u_present.assign(static_cast<std::size_t>(n), 0);

  // Uniformly random biased subset of exact size round(rho * n_aux).
  std::vector<int> aux_order(static_cast<std::size_t>(config.n_aux));
  for (int k = 0; k < config.n_aux; ++k) aux_order[static_cast<std::size_t>(k)] = k;
  rng.shuffle(aux_order);
  const int n_biased = static_cast<int>(std::llround(config.rho * config.n_aux));
  std::vector<std::uint8_t> aux_biased(static_cast<std::size_t>(config.n_aux), 0);
  for (int k = 0; k < n_biased; ++k) {
    aux_biased[static_cast<std::size_t>(aux_order[static_cast<std::size_t>(k)])] = 1;
  }

  const double target_sd = std::sqrt(config.target_noise_var);
  const double aux_sd = std::sqrt(config.eps);
  for (int i = 0; i < n; ++i) {
    const bool target = i < config.n_target;
    const Eigen::Vector3d& v =
        target ? cov_target[static_cast<std::size_t>(i)]
               : cov_aux[static_cast<std::size_t>(i - config.n_target)];
    d.x(i, 0) = v[0];
    d.x(i, 1) = v[1];
    const double u_val = v[2];
    const int arm = rng.bernoulli(config.treat_p) ? 1 : 0;
    d.treatment[i] = arm;

    if (target) {
      d.region[i] = kTargetRegion;
      d.u(i, 0) = u_val;
      d.u_present[static_cast<std::size_t>(i)] = 1;
      if (config.constant_effect) {
        const double y0 = outcome_mean(config.beta0, config.alpha0, v[0], v[1],
                                       u_val) +
                          rng.normal() * target_sd;
        d.outcome[i] = arm == 1 ? y0 + config.tau_shift : y0;
      } else {
        const Eigen::Vector3d& beta = arm == 1 ? config.beta1 : config.beta0;
        const double alpha_u = arm == 1 ? config.alpha1 : config.alpha0;
        d.outcome[i] = outcome_mean(beta, alpha_u, v[0], v[1], u_val) +
                       rng.normal() * target_sd;
      }
    } else {
      const int aux_idx = i - config.n_target;
      const bool biased = aux_biased[static_cast<std::size_t>(aux_idx)] != 0;
      out.biased[static_cast<std::size_t>(i)] = biased ? 1 : 0;
      d.region[i] = config.aux_region_count == 1
                        ? 0
                        : 2 + static_cast<int>(rng.uniform_int(
                                  static_cast<std::uint64_t>(
                                      config.aux_region_count)));
      // U exists in the superpopulation but is blanked for auxiliary rows.
      if (config.constant_effect) {
        double mean = outcome_mean(config.beta0, biased ? 0.0 : config.alpha0,
                                   v[0], v[1], u_val);
        if (biased) mean -= config.bias_for_arm(arm);
        if (arm == 1) mean += config.tau_shift;
        d.outcome[i] = mean + rng.normal() * aux_sd;
      } else {
        const Eigen::Vector3d& beta = arm == 1 ? config.beta1 : config.beta0;
        const double alpha_u = arm == 1 ? config.alpha1 : config.alpha0;
        double mean = biased
                          ? outcome_mean(beta, 0.0, v[0], v[1], u_val) -
                                config.bias_for_arm(arm)
                          : outcome_mean(beta, alpha_u, v[0], v[1], u_val);
        d.outcome[i] = mean + rng.normal() * aux_sd;
      }
    }
  }
  d.finalize();
  return out;
}

McValue true_rsate(const DgpConfig& config, std::int64_t n_mc,
                   std::uint64_t seed) {
  config.check();
  if (config.constant_effect) return {config.tau_shift, 0.0, false};
  if (n_mc < 100000) {
    throw std::invalid_argument("true_rsate: n_mc must be >= 1e5");
  }
  Rng rng(derive_seed(seed, {streams::kOracle}));
  const CovariateSampler sampler(config.scenario);
  double sum = 0.0, sumsq = 0.0;
  std::int64_t accepted = 0;
  while (accepted < n_mc) {
    const Eigen::Vector3d v = sampler.draw(rng);
    if (!rng.bernoulli(target_sampling_prob(config, v[0], v[1]))) continue;
    const double diff =
        outcome_mean(config.beta1, config.alpha1, v[0], v[1], v[2]) -
        outcome_mean(config.beta0, config.alpha0, v[0], v[1], v[2]);
    sum += diff;
    sumsq += diff * diff;
    ++accepted;
  }
  const double mean = sum / static_cast<double>(n_mc);
  const double var =
      (sumsq - static_cast<double>(n_mc) * mean * mean) /
      static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(n_mc)),
          false};
}

McValue signal_ratio(const DgpConfig& config, std::int64_t n_mc,
                     std::uint64_t seed) {
  config.check();
  if (n_mc < 100000) {
    throw std::invalid_argument("signal_ratio: n_mc must be >= 1e5");
  }
  Rng rng(derive_seed(seed, {streams::kOracle, 2}));
  const CovariateSampler sampler(config.scenario);
  Eigen::MatrixXd xu(n_mc, 3);
  Eigen::VectorXd y(n_mc);
  const double target_sd = std::sqrt(config.target_noise_var);
  std::int64_t accepted = 0;
  while (accepted < n_mc) {
    const Eigen::Vector3d v = sampler.draw(rng);
    if (!rng.bernoulli(target_sampling_prob(config, v[0], v[1]))) continue;
    xu.row(accepted) = v.transpose();
    y[accepted] = outcome_mean(config.beta0, config.alpha0, v[0], v[1], v[2]) +
                  rng.normal() * target_sd;
    ++accepted;
  }
  auto rss = [&](const Eigen::MatrixXd& features) {
    const LinearModelFit fit = fit_linear(features, y);
    return fit.residual_mse * static_cast<double>(n_mc);
  };
  const double sse_x = rss(xu.leftCols(2));
  const double sse_u = rss(xu.rightCols(1));
  const double sse_xu = rss(xu);
  const double r2_x_given_u = (sse_u - sse_xu) / sse_u;
  const double r2_u_given_x = (sse_x - sse_xu) / sse_x;
  // Under a signal-free U the RSS reduction is a chi^2_1 noise term of size
  // ~1/n_mc; treat anything of that order as a zero denominator.
  if (r2_u_given_x <= 10.0 / static_cast<double>(n_mc)) {
    return {std::numeric_limits<double>::infinity(), 0.0, true};
  }
  return {r2_x_given_u / r2_u_given_x, 0.0, false};
}

const std::vector<std::string> kAllMethods = {
    "DiM",    "NB-Xonly", "NB-AllCov", "FB-Xonly",
    "FB-IVW", "CSB-Xonly", "CSB-IVW"};

TauEstimate run_method(const std::string& method, const StudyDataset& dataset,
                       const DesignPropensity& design, double alpha,
                       const CsbOptions& csb, std::uint64_t seed) {
  if (method == "DiM") return difference_in_means(dataset, alpha);
  if (method == "NB-Xonly") return estimate_nb_xonly(dataset, design, alpha);
  if (method == "NB-AllCov") return estimate_nb_allcov(dataset, design, alpha);
  if (method == "FB-Xonly") {
    return estimate_fb_xonly(dataset, design, alpha, csb.clip_eps);
  }
  if (method == "FB-IVW") {
    return estimate_fb_ivw(dataset, design, alpha, csb.clip_eps);
  }
  if (method == "CSB-IVW" || method == "CSB-Xonly") {
    CsbOptions opts = csb;
    opts.alpha = alpha;
    opts.use_ivw = method == "CSB-IVW";
    opts.seed = seed;
    return csb_pipeline(dataset, design, opts);
  }
  throw std::invalid_argument("unknown method name '" + method + "'");
}

namespace {

struct RepOutcome {
  double tau_hat = 0.0;
  bool covered = false;
  bool rejected = false;
  bool failed = false;
};

json row_to_json(const MetricsRow& r) {
  return json{{"scenario", r.scenario}, {"tau_true", r.tau_true},
              {"method", r.method},     {"mse", r.mse},
              {"mse_pct", r.mse_pct},   {"bias", r.bias},
              {"coverage", r.coverage}, {"rejection", r.rejection},
              {"n_rep", r.n_rep},       {"n_fail", r.n_fail}};
}

void row_from_json(const json& j, MetricsRow& r) {
  r.scenario = j.at("scenario");
  r.tau_true = j.at("tau_true");
  r.method = j.at("method");
  r.mse = j.at("mse");
  r.mse_pct = j.at("mse_pct");
  r.bias = j.at("bias");
  r.coverage = j.at("coverage");
  r.rejection = j.at("rejection");
  r.n_rep = j.at("n_rep");
  r.n_fail = j.at("n_fail");
}

}  // namespace

MetricsTable run_replications(const std::vector<Scenario>& scenarios,
                              const std::vector<std::string>& methods,
                              int n_rep, const FrtSimConfig& frt,
                              std::uint64_t seed, const SimOptions& options) {
  if (n_rep < 2) throw std::invalid_argument("run_replications: n_rep >= 2");
  for (const auto& m : methods) {
    if (std::find(kAllMethods.begin(), kAllMethods.end(), m) ==
        kAllMethods.end()) {
      throw std::invalid_argument("unknown method name '" + m + "'");
    }
  }
  MetricsTable table;
  table.seed = seed;

  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const Scenario& sc = scenarios[s];
    const std::uint64_t scenario_seed =
        derive_seed(seed, {streams::kScenario, static_cast<std::uint64_t>(s)});
    table.scenario_seeds.push_back(scenario_seed);

    // Per-scenario checkpoint: reuse a completed scenario when resuming.
    std::filesystem::path ckpt;
    if (!options.checkpoint_dir.empty()) {
      ckpt = std::filesystem::path(options.checkpoint_dir) /
             ("scenario_" + std::to_string(s) + ".json");
      if (options.resume && std::filesystem::exists(ckpt)) {
        std::ifstream in(ckpt);
        json j;
        in >> j;
        if (j.at("scenario") == sc.name && j.at("n_rep") == n_rep &&
            j.at("methods") == methods &&
            j.at("seed") == scenario_seed) {
          for (const auto& jr : j.at("rows")) {
            MetricsRow r;
            row_from_json(jr, r);
            r.dgp = sc.dgp;
            table.rows.push_back(std::move(r));
          }
          continue;
        }
      }
    }

    const McValue tau =
        true_rsate(sc.dgp, options.oracle_mc, scenario_seed);
    const DesignPropensity design = DesignPropensity::constant(sc.dgp.treat_p);

    std::vector<std::vector<RepOutcome>> outcomes(
        methods.size(), std::vector<RepOutcome>(static_cast<std::size_t>(n_rep)));
    parallel_for(static_cast<std::size_t>(n_rep), options.workers,
                 [&](std::size_t r) {
      const std::uint64_t rep_seed = derive_seed(
          scenario_seed, {streams::kReplicate, static_cast<std::uint64_t>(r)});
      const GeneratedTrial trial = generate_trial(sc.dgp, rep_seed);
      for (std::size_t m = 0; m < methods.size(); ++m) {
        RepOutcome& oc = outcomes[m][r];
        const std::uint64_t method_seed =
            derive_seed(rep_seed, {streams::kCsb, static_cast<std::uint64_t>(m)});
        try {
          const TauEstimate est =
              run_method(methods[m], trial.data, design, options.alpha,
                         options.csb, method_seed);
          oc.tau_hat = est.tau_hat;
          oc.covered = est.ci_lower <= tau.value && tau.value <= est.ci_upper;
          if (frt.enabled) {
            const std::string method = methods[m];
            const CsbOptions csb = options.csb;
            const double alpha = options.alpha;
            FrtStatistic stat = [method, csb, alpha, &design](
                                    const StudyDataset& d,
                                    const std::vector<int>& a,
                                    std::uint64_t stat_seed) {
              return run_method(method, with_assignment(d, a), design, alpha,
                                csb, stat_seed)
                  .tau_hat;
            };
            const FrtResult fr =
                frt_pvalue(trial.data, stat, frt.scheme, frt.B,
                           derive_seed(method_seed, {streams::kFrt}),
                           methods[m]);
            oc.rejected = fr.p_two_sided <= options.alpha;
          } else {
            oc.rejected = est.asymptotic_pvalue() <= options.alpha;
          }
        } catch (const std::exception&) {
          oc.failed = true;
        }
      }
    });

    std::vector<MetricsRow> scenario_rows;
    double nb_allcov_mse = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t m = 0; m < methods.size(); ++m) {
      MetricsRow row;
      row.scenario = sc.name;
      row.dgp = sc.dgp;
      row.tau_true = tau.value;
      row.method = methods[m];
      row.n_rep = n_rep;
      double se_sum = 0.0, bias_sum = 0.0;
      int covered = 0, rejected = 0, ok = 0;
      for (const RepOutcome& oc : outcomes[m]) {
        if (oc.failed) {
          ++row.n_fail;
          continue;
        }
        ++ok;
        const double err = oc.tau_hat - tau.value;
        se_sum += err * err;
        bias_sum += err;
        covered += oc.covered;
        rejected += oc.rejected;
      }
      if (ok > 0) {
        row.mse = se_sum / ok;
        row.bias = bias_sum / ok;
        row.coverage = static_cast<double>(covered) / ok;
        row.rejection = static_cast<double>(rejected) / ok;
      }
      if (methods[m] == "NB-AllCov") nb_allcov_mse = row.mse;
      scenario_rows.push_back(std::move(row));
    }
    for (auto& row : scenario_rows) {
      row.mse_pct = std::isnan(nb_allcov_mse)
                        ? std::numeric_limits<double>::quiet_NaN()
                        : 100.0 * row.mse / nb_allcov_mse;
    }

    if (!ckpt.empty()) {
      std::filesystem::create_directories(ckpt.parent_path());
      json j{{"scenario", sc.name},
             {"n_rep", n_rep},
             {"methods", methods},
             {"seed", scenario_seed}};
      j["rows"] = json::array();
      for (const auto& row : scenario_rows) j["rows"].push_back(row_to_json(row));
      std::ofstream outf(ckpt);
      outf << j.dump(2) << "\n";
    }
    for (auto& row : scenario_rows) table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace rsate
