// Command-line entry point: estimate, frt, simulate, match, pvalues.
//
// All configuration lives in a JSON file (--config); a few flags override
// file values. Every output file embeds the resolved config and master seed,
// and all randomness flows from that seed through named derivation paths, so
// reruns are byte-identical at any worker count.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "rsate/csb.hpp"
#include "rsate/estimators.hpp"
#include "rsate/frt.hpp"
#include "rsate/multiregion.hpp"
#include "rsate/parallel.hpp"
#include "rsate/report.hpp"
#include "rsate/rng.hpp"
#include "rsate/sim.hpp"

namespace {

using json = nlohmann::json;
using namespace rsate;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

const json& require(const json& j, const std::string& key) {
  if (!j.contains(key)) throw ConfigError("config is missing '" + key + "'");
  return j.at(key);
}

CovariateSchema parse_schema(const json& j) {
  CovariateSchema s;
  s.region_column = get_or<std::string>(j, "region", "R");
  s.treatment_column = get_or<std::string>(j, "treatment", "A");
  s.outcome_column = get_or<std::string>(j, "outcome", "Y");
  s.shared_names = get_or<std::vector<std::string>>(j, "shared", {});
  s.target_only_names = get_or<std::vector<std::string>>(j, "target_only", {});
  try {
    s.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

DesignPropensity parse_design(const json& config) {
  if (!config.contains("design")) return DesignPropensity::constant(0.5);
  const json& j = config.at("design");
  const std::string kind = get_or<std::string>(j, "kind", "constant");
  try {
    if (kind == "constant") {
      return DesignPropensity::constant(get_or<double>(j, "p_treat", 0.5));
    }
    if (kind == "stratified_by_region") {
      std::map<int, double> by_region;
      for (const auto& [key, value] : require(j, "by_region").items()) {
        by_region[std::stoi(key)] = value.get<double>();
      }
      return DesignPropensity::stratified(std::move(by_region));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("design.kind must be 'constant' or 'stratified_by_region'");
}

CsbOptions parse_csb(const json& config, std::uint64_t seed, int workers) {
  CsbOptions opts;
  opts.seed = seed;
  opts.workers = workers;
  if (config.contains("conformal")) {
    opts.K = get_or<int>(config.at("conformal"), "K", 10);
  }
  if (config.contains("csb")) {
    const json& j = config.at("csb");
    opts.grid = get_or<std::vector<double>>(j, "grid", {});
    opts.L = get_or<int>(j, "L", 100);
    opts.clip_eps = get_or<double>(j, "clip_eps", kDefaultClipEps);
  }
  return opts;
}

RandomizationScheme parse_scheme(const json& j, const StudyDataset& dataset) {
  const std::string kind = get_or<std::string>(j, "kind", "complete");
  try {
    if (kind == "complete") {
      return RandomizationScheme::complete(get_or<int>(j, "n1", -1));
    }
    if (kind == "bernoulli") {
      return RandomizationScheme::bernoulli(get_or<double>(j, "p", 0.5));
    }
    if (kind == "stratified_complete") {
      const std::string column = get_or<std::string>(j, "stratify_by", "");
      const auto it = std::find(dataset.schema.shared_names.begin(),
                                dataset.schema.shared_names.end(), column);
      if (it == dataset.schema.shared_names.end()) {
        throw ConfigError("frt.scheme.stratify_by: unknown column '" + column +
                          "'");
      }
      const Eigen::Index col = it - dataset.schema.shared_names.begin();
      std::vector<int> strata;
      for (int i : dataset.target_rows) {
        strata.push_back(static_cast<int>(std::llround(dataset.x(i, col))));
      }
      return RandomizationScheme::stratified(std::move(strata));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  throw ConfigError("frt.scheme.kind must be complete, bernoulli, or stratified_complete");
}

DgpConfig parse_dgp(const json& base, const json& overrides) {
  DgpConfig c;
  auto apply = [&c](const json& j) {
    c.n_target = get_or<int>(j, "n_target", c.n_target);
    c.n_aux = get_or<int>(j, "n_aux", c.n_aux);
    const std::string scen = get_or<std::string>(
        j, "scenario",
        c.scenario == CovariateScenario::correlated ? "correlated"
                                                    : "independent");
    if (scen != "correlated" && scen != "independent") {
      throw ConfigError("dgp.scenario must be independent or correlated");
    }
    c.scenario = scen == "correlated" ? CovariateScenario::correlated
                                      : CovariateScenario::independent;
    if (j.contains("alpha0")) c.with_alpha(j.at("alpha0").get<double>());
    c.alpha1 = get_or<double>(j, "alpha1", c.alpha1);
    c.eps = get_or<double>(j, "eps", c.eps);
    c.target_noise_var = get_or<double>(j, "target_noise_var", c.target_noise_var);
    c.b0 = get_or<double>(j, "b0", c.b0);
    c.b1 = get_or<double>(j, "b1", c.b1);
    c.rho = get_or<double>(j, "rho", c.rho);
    c.treat_p = get_or<double>(j, "treat_p", c.treat_p);
    const std::string bias_arms = get_or<std::string>(
        j, "bias_arms", c.bias_arms == BiasArms::both ? "both" : "control_only");
    c.bias_arms =
        bias_arms == "control_only" ? BiasArms::control_only : BiasArms::both;
    c.constant_effect = get_or<bool>(j, "constant_effect", c.constant_effect);
    c.tau_shift = get_or<double>(j, "tau_shift", c.tau_shift);
    c.aux_region_count = get_or<int>(j, "aux_region_count", c.aux_region_count);
    if (j.contains("beta0")) {
      const auto v = j.at("beta0").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("dgp.beta0 needs 3 entries");
      c.beta0 = Eigen::Vector3d(v[0], v[1], v[2]);
    }
    if (j.contains("beta1")) {
      const auto v = j.at("beta1").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("dgp.beta1 needs 3 entries");
      c.beta1 = Eigen::Vector3d(v[0], v[1], v[2]);
    }
  };
  if (!base.is_null()) apply(base);
  if (!overrides.is_null()) apply(overrides);
  try {
    c.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RegionCovariateMap parse_region_map(const json& config) {
  RegionCovariateMap map;
  if (!config.contains("multiregion")) {
    throw ConfigError("multi-region method requested but 'multiregion' config is missing");
  }
  for (const auto& [key, value] :
       require(config.at("multiregion"), "shared_of").items()) {
    map.shared_of[std::stoi(key)] = value.get<std::vector<std::string>>();
  }
  return map;
}

StudyDataset load_from_config(const json& config) {
  const json& d = require(config, "dataset");
  const CovariateSchema schema = parse_schema(require(d, "schema"));
  return load_dataset(require(d, "path").get<std::string>(), schema);
}

std::ofstream open_output(const std::filesystem::path& dir,
                          const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write output file: " + name);
  return out;
}

const std::vector<std::string> kMultiregionMethods = {"FB-IVW-multiregion",
                                                      "CSB-IVW-multiregion"};

bool is_multiregion(const std::string& method) {
  return std::find(kMultiregionMethods.begin(), kMultiregionMethods.end(),
                   method) != kMultiregionMethods.end();
}

int cmd_estimate(const json& config, std::uint64_t seed, int workers,
                 const std::filesystem::path& outdir) {
  const StudyDataset dataset = load_from_config(config);
  const DesignPropensity design = parse_design(config);
  const json est_cfg = get_or<json>(config, "estimate", json::object());
  const double alpha = get_or<double>(est_cfg, "alpha", 0.05);
  const bool include_indices =
      get_or<bool>(est_cfg, "include_borrowed_indices", true);
  std::vector<std::string> methods = get_or<std::vector<std::string>>(
      est_cfg, "methods",
      {"DiM", "NB-Xonly", "NB-AllCov", "FB-Xonly", "FB-IVW", "CSB-IVW"});
  for (const auto& m : methods) {
    if (!is_multiregion(m) &&
        std::find(kAllMethods.begin(), kAllMethods.end(), m) ==
            kAllMethods.end()) {
      throw ConfigError("unknown method name '" + m + "'");
    }
  }

  json records = json::array();
  std::optional<CsbPipelineResult> csb_detail;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const std::uint64_t method_seed =
        derive_seed(seed, {streams::kCsb, static_cast<std::uint64_t>(m)});
    CsbOptions opts = parse_csb(config, method_seed, workers);
    opts.alpha = alpha;
    TauEstimate est;
    if (methods[m] == "FB-IVW-multiregion") {
      est = combine(estimate_all_regions(dataset, design,
                                         parse_region_map(config), alpha,
                                         opts.clip_eps));
    } else if (methods[m] == "CSB-IVW-multiregion") {
      est = select_by_region(dataset, design, parse_region_map(config), opts);
    } else if (methods[m] == "CSB-IVW" || methods[m] == "CSB-Xonly") {
      opts.use_ivw = methods[m] == "CSB-IVW";
      CsbPipelineResult r = csb_pipeline_detailed(dataset, design, opts);
      est = r.estimate;
      if (methods[m] == "CSB-IVW") csb_detail = std::move(r);
    } else {
      est = run_method(methods[m], dataset, design, alpha, opts, method_seed);
    }
    records.push_back(tau_to_json(est, include_indices));
  }

  json out{{"config", config}, {"seed", seed}, {"estimates", records}};
  open_output(outdir, "estimates.json") << out.dump(2) << "\n";
  if (csb_detail.has_value()) {
    const json echo{{"seed", seed}, {"command", "estimate"}};
    auto pv = open_output(outdir, "pvalues.csv");
    write_pvalues_csv(pv, csb_detail->pvalues, echo);
    auto curves = open_output(outdir, "mse_curves.csv");
    write_mse_curve_csv(curves, csb_detail->curves[0], csb_detail->curves[1],
                        echo);
  }
  return 0;
}

int cmd_frt(const json& config, std::uint64_t seed, int workers,
            const std::filesystem::path& outdir) {
  const StudyDataset dataset = load_from_config(config);
  const DesignPropensity design = parse_design(config);
  const json frt_cfg = get_or<json>(config, "frt", json::object());
  const int B = get_or<int>(frt_cfg, "B", 1000);
  if (B < 1) throw ConfigError("frt.B must be >= 1");
  const bool include_draws = get_or<bool>(frt_cfg, "include_draws", false);
  const std::string sided = get_or<std::string>(frt_cfg, "sided", "two");
  if (sided != "one" && sided != "two") {
    throw ConfigError("frt.sided must be 'one' or 'two'");
  }
  const double alpha =
      get_or<double>(get_or<json>(config, "estimate", json::object()), "alpha", 0.05);
  const RandomizationScheme scheme =
      parse_scheme(get_or<json>(frt_cfg, "scheme", json::object()), dataset);
  const std::vector<std::string> statistics =
      get_or<std::vector<std::string>>(frt_cfg, "statistics", {"CSB-IVW"});

  json results = json::array();
  for (std::size_t s = 0; s < statistics.size(); ++s) {
    const std::string& method = statistics[s];
    if (std::find(kAllMethods.begin(), kAllMethods.end(), method) ==
        kAllMethods.end()) {
      throw ConfigError("unknown method name '" + method + "'");
    }
    const std::uint64_t stat_seed =
        derive_seed(seed, {streams::kFrt, static_cast<std::uint64_t>(s)});
    CsbOptions opts = parse_csb(config, 0, 1);
    opts.alpha = alpha;
    const FrtStatistic stat = [&method, &design, alpha, opts](
                                  const StudyDataset& d,
                                  const std::vector<int>& a,
                                  std::uint64_t stat_draw_seed) {
      CsbOptions draw_opts = opts;
      draw_opts.seed = stat_draw_seed;
      return run_method(method, with_assignment(d, a), design, alpha,
                        draw_opts, stat_draw_seed)
          .tau_hat;
    };
    const FrtResult fr =
        frt_pvalue(dataset, stat, scheme, B, stat_seed, method, workers);
    // Asymptotic counterpart, reported side by side.
    CsbOptions est_opts = parse_csb(config, derive_seed(stat_seed, {1}), workers);
    est_opts.alpha = alpha;
    const TauEstimate asymptotic =
        run_method(method, dataset, design, alpha, est_opts, est_opts.seed);
    json r{{"statistic", method},
           {"frt", frt_to_json(fr, include_draws)},
           {"p_reported", sided == "two" ? fr.p_two_sided : fr.p_one_sided},
           {"sided", sided},
           {"asymptotic", tau_to_json(asymptotic, false)}};
    results.push_back(std::move(r));
  }
  json out{{"config", config}, {"seed", seed}, {"results", results}};
  open_output(outdir, "frt.json") << out.dump(2) << "\n";
  return 0;
}

int cmd_simulate(const json& config, std::uint64_t seed, int workers,
                 const std::filesystem::path& outdir, bool resume) {
  const json sim_cfg = require(config, "simulate");
  const json base_dgp = get_or<json>(sim_cfg, "dgp", json::object());
  std::vector<Scenario> scenarios;
  if (sim_cfg.contains("scenarios")) {
    for (const auto& js : sim_cfg.at("scenarios")) {
      Scenario sc;
      sc.name = require(js, "name").get<std::string>();
      sc.dgp = parse_dgp(base_dgp, get_or<json>(js, "overrides", json::object()));
      scenarios.push_back(std::move(sc));
    }
  } else {
    Scenario sc;
    sc.name = "default";
    sc.dgp = parse_dgp(base_dgp, json());
    scenarios.push_back(std::move(sc));
  }

  SimOptions options;
  options.workers = workers;
  options.alpha = get_or<double>(sim_cfg, "alpha", 0.05);
  options.csb = parse_csb(config, 0, 1);
  options.oracle_mc = get_or<std::int64_t>(sim_cfg, "oracle_mc", 200000);
  options.checkpoint_dir = (outdir / "checkpoints").string();
  options.resume = resume;

  FrtSimConfig frt;
  if (sim_cfg.contains("frt")) {
    const json& jf = sim_cfg.at("frt");
    frt.enabled = get_or<bool>(jf, "enabled", true);
    frt.B = get_or<int>(jf, "B", 500);
    if (frt.B < 1) throw ConfigError("simulate.frt.B must be >= 1");
  }
  const int n_rep = get_or<int>(sim_cfg, "n_rep", 500);
  const std::vector<std::string> methods = get_or<std::vector<std::string>>(
      sim_cfg, "methods", kAllMethods);

  const MetricsTable table =
      run_replications(scenarios, methods, n_rep, frt, seed, options);
  // FRT scheme note: the generator assigns treatments Bernoulli(p) per row,
  // matching FrtSimConfig's default scheme.
  const json echo{{"config", config}, {"seed", seed}};
  auto out = open_output(outdir, "metrics.csv");
  write_metrics_csv(out, table, echo);
  return 0;
}

int cmd_match(const json& config, std::uint64_t seed,
              const std::filesystem::path& outdir) {
  const StudyDataset dataset = load_from_config(config);
  const json match_cfg = get_or<json>(config, "match", json::object());
  const int ratio = get_or<int>(match_cfg, "ratio", 4);
  const std::string score_spec =
      get_or<std::string>(match_cfg, "score", "sampling");

  Eigen::VectorXd score(dataset.n());
  if (score_spec == "sampling") {
    // Default matching score: linear predictor of the fitted sampling model.
    const SamplingFit fit = fit_sampling_model(dataset);
    for (Eigen::Index i = 0; i < dataset.n(); ++i) {
      score[i] = fit.fit.coefficients[0] +
                 dataset.x.row(i) * fit.fit.coefficients.tail(dataset.x.cols());
    }
  } else {
    const auto it = std::find(dataset.schema.shared_names.begin(),
                              dataset.schema.shared_names.end(), score_spec);
    if (it == dataset.schema.shared_names.end()) {
      throw ConfigError("match.score: unknown column '" + score_spec + "'");
    }
    score = dataset.x.col(it - dataset.schema.shared_names.begin());
  }
  const StudyDataset matched = nn_match(dataset, ratio, score);

  std::filesystem::create_directories(outdir);
  const auto path = outdir / "matched.csv";
  {
    std::ofstream out(path, std::ios::binary);
    out << "# config: " << json{{"config", config}, {"seed", seed}}.dump()
        << "\n";
  }
  // Append the dataset body after the config echo.
  const auto tmp = outdir / ".matched.body.csv";
  save_dataset(tmp.string(), matched);
  std::ifstream body(tmp, std::ios::binary);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << body.rdbuf();
  body.close();
  std::filesystem::remove(tmp);
  return 0;
}

int cmd_pvalues(const json& config, std::uint64_t seed, int /*workers*/,
                const std::filesystem::path& outdir) {
  const StudyDataset dataset = load_from_config(config);
  const int K = get_or<int>(get_or<json>(config, "conformal", json::object()),
                            "K", 10);
  const PValueTable table = compute_pvalues(dataset, K, seed);
  const json echo{{"config", config}, {"seed", seed}};
  auto out = open_output(outdir, "pvalues.csv");
  write_pvalues_csv(out, table, echo);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-specific treatment effect estimation with selective borrowing"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> workers_flag;
  std::optional<std::string> out_flag;
  bool resume = false;
  app.add_option("--config", config_path, "JSON config file")->required();
  app.add_option("--seed", seed_flag, "override config seed");
  app.add_option("--workers", workers_flag, "override worker count");
  app.add_option("--out", out_flag, "override output directory");

  auto* estimate = app.add_subcommand("estimate", "run the requested estimators");
  auto* frt = app.add_subcommand("frt", "conditional randomization test");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo replication study");
  simulate->add_flag("--resume", resume, "reuse per-scenario checkpoints");
  auto* match = app.add_subcommand("match", "nearest-neighbor pre-processing");
  auto* pvalues = app.add_subcommand("pvalues", "dump the conformal p-value table");
  for (auto* sub : {estimate, frt, simulate, match, pvalues}) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  json config;
  std::uint64_t seed = 0;
  int workers = 0;
  std::filesystem::path outdir;
  try {
    config = load_config(config_path);
    if (seed_flag.has_value()) config["seed"] = *seed_flag;
    if (out_flag.has_value()) config["output_dir"] = *out_flag;
    if (!config.contains("seed")) {
      throw ConfigError("config requires an explicit 'seed'");
    }
    seed = config.at("seed").get<std::uint64_t>();
    // The worker count never enters the config echo: outputs are
    // byte-identical at any parallelism level.
    workers = resolve_workers(workers_flag.value_or(
        get_or<int>(config, "workers", 0)));
    config.erase("workers");
    outdir = get_or<std::string>(config, "output_dir", "out");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (estimate->parsed()) return cmd_estimate(config, seed, workers, outdir);
    if (frt->parsed()) return cmd_frt(config, seed, workers, outdir);
    if (simulate->parsed()) {
      return cmd_simulate(config, seed, workers, outdir, resume);
    }
    if (match->parsed()) return cmd_match(config, seed, outdir);
    if (pvalues->parsed()) return cmd_pvalues(config, seed, workers, outdir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
