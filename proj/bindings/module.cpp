// Python bindings for the main operations: dataset handling, estimators,
// conformal p-values, selective borrowing, randomization tests, the
// multi-region extension, and the simulation engine.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rsate/csb.hpp"
#include "rsate/estimators.hpp"
#include "rsate/frt.hpp"
#include "rsate/multiregion.hpp"
#include "rsate/sim.hpp"

namespace py = pybind11;
using namespace rsate;

namespace {

StudyDataset dataset_from_arrays(const CovariateSchema& schema,
                                 const Eigen::VectorXi& region,
                                 const Eigen::VectorXi& treatment,
                                 const Eigen::VectorXd& outcome,
                                 const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& u) {
  StudyDataset d;
  d.schema = schema;
  d.schema.check();
  d.region = region;
  d.treatment = treatment;
  d.outcome = outcome;
  d.x = x;
  d.u = u;
  d.u_present.assign(static_cast<std::size_t>(region.size()), 0);
  for (Eigen::Index i = 0; i < region.size(); ++i) {
    d.u_present[static_cast<std::size_t>(i)] =
        u.cols() == 0 || u.row(i).allFinite();
  }
  d.finalize();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Region-specific treatment effect estimation with selective borrowing";

  py::class_<CovariateSchema>(m, "CovariateSchema")
      .def(py::init<>())
      .def_readwrite("shared_names", &CovariateSchema::shared_names)
      .def_readwrite("target_only_names", &CovariateSchema::target_only_names)
      .def_readwrite("region_column", &CovariateSchema::region_column)
      .def_readwrite("treatment_column", &CovariateSchema::treatment_column)
      .def_readwrite("outcome_column", &CovariateSchema::outcome_column)
      .def("check", &CovariateSchema::check);

  py::class_<TrialRecord>(m, "TrialRecord")
      .def_readonly("region", &TrialRecord::region)
      .def_readonly("treatment", &TrialRecord::treatment)
      .def_readonly("outcome", &TrialRecord::outcome)
      .def_readonly("x", &TrialRecord::x)
      .def_readonly("u", &TrialRecord::u);

  py::class_<StudyDataset>(m, "StudyDataset")
      .def(py::init(&dataset_from_arrays), py::arg("schema"), py::arg("region"),
           py::arg("treatment"), py::arg("outcome"), py::arg("x"), py::arg("u"))
      .def_readonly("schema", &StudyDataset::schema)
      .def_readonly("region", &StudyDataset::region)
      .def_readonly("treatment", &StudyDataset::treatment)
      .def_readonly("outcome", &StudyDataset::outcome)
      .def_readonly("x", &StudyDataset::x)
      .def_readonly("u", &StudyDataset::u)
      .def_property_readonly("n", &StudyDataset::n)
      .def_readonly("n_target", &StudyDataset::n_target)
      .def_readonly("n_aux", &StudyDataset::n_aux)
      .def_readonly("target_rows", &StudyDataset::target_rows)
      .def_readonly("aux_rows", &StudyDataset::aux_rows)
      .def("record", &StudyDataset::record, py::arg("i"));

  m.def("load_dataset",
        [](const std::string& path, const CovariateSchema& schema) {
          return load_dataset(path, schema);
        },
        py::arg("path"), py::arg("schema"));
  m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("dataset"));
  m.def("validate", &validate, py::arg("dataset"));
  m.def("nn_match", &nn_match, py::arg("dataset"), py::arg("ratio"),
        py::arg("score"));

  py::class_<DesignPropensity>(m, "DesignPropensity")
      .def_static("constant", &DesignPropensity::constant, py::arg("p") = 0.5)
      .def_static("stratified", &DesignPropensity::stratified,
                  py::arg("p_by_region"))
      .def_static("table", &DesignPropensity::table, py::arg("p_per_record"));

  py::class_<ArmEstimate>(m, "ArmEstimate")
      .def_readonly("theta_hat", &ArmEstimate::theta_hat)
      .def_readonly("arm", &ArmEstimate::arm)
      .def_readonly("contributions", &ArmEstimate::contributions);

  py::class_<TauEstimate>(m, "TauEstimate")
      .def_readonly("method", &TauEstimate::method)
      .def_readonly("tau_hat", &TauEstimate::tau_hat)
      .def_readonly("theta1", &TauEstimate::theta1)
      .def_readonly("theta0", &TauEstimate::theta0)
      .def_readonly("se", &TauEstimate::se)
      .def_readonly("ci_lower", &TauEstimate::ci_lower)
      .def_readonly("ci_upper", &TauEstimate::ci_upper)
      .def_readonly("alpha", &TauEstimate::alpha)
      .def_readonly("gamma", &TauEstimate::gamma)
      .def_readonly("borrowed_indices", &TauEstimate::borrowed_indices)
      .def_readonly("influence", &TauEstimate::influence)
      .def_readonly("n_used", &TauEstimate::n_used)
      .def_readonly("flags", &TauEstimate::flags)
      .def_property_readonly("borrowed_count", &TauEstimate::borrowed_count)
      .def_property_readonly("p_value_asymptotic",
                             &TauEstimate::asymptotic_pvalue)
      .def("__repr__", [](const TauEstimate& e) {
        return "<TauEstimate " + e.method + " tau_hat=" +
               std::to_string(e.tau_hat) + " se=" + std::to_string(e.se) + ">";
      });

  m.def("difference_in_means", &difference_in_means, py::arg("dataset"),
        py::arg("alpha") = 0.05);
  m.def("estimate_nb_xonly", &estimate_nb_xonly, py::arg("dataset"),
        py::arg("design"), py::arg("alpha") = 0.05);
  m.def("estimate_nb_allcov", &estimate_nb_allcov, py::arg("dataset"),
        py::arg("design"), py::arg("alpha") = 0.05);
  m.def("estimate_fb_xonly", &estimate_fb_xonly, py::arg("dataset"),
        py::arg("design"), py::arg("alpha") = 0.05,
        py::arg("clip_eps") = kDefaultClipEps);
  m.def("estimate_fb_ivw", &estimate_fb_ivw, py::arg("dataset"),
        py::arg("design"), py::arg("alpha") = 0.05,
        py::arg("clip_eps") = kDefaultClipEps);

  py::class_<PValueTable>(m, "PValueTable")
      .def_readonly("K", &PValueTable::K)
      .def_readonly("seed", &PValueTable::seed)
      .def_readonly("entries", &PValueTable::entries)
      .def_readonly("flags", &PValueTable::flags)
      .def("p_of", &PValueTable::p_of, py::arg("record_index"), py::arg("arm"));

  m.def("compute_pvalues", &compute_pvalues, py::arg("dataset"), py::arg("K"),
        py::arg("seed"));

  py::class_<SelectedSet>(m, "SelectedSet")
      .def_readonly("arm", &SelectedSet::arm)
      .def_readonly("gamma", &SelectedSet::gamma)
      .def_readonly("indices", &SelectedSet::indices);

  m.def("select_set", &select_set, py::arg("pvalues"), py::arg("arm"),
        py::arg("gamma"));

  py::class_<CsbOptions>(m, "CsbOptions")
      .def(py::init<>())
      .def_readwrite("K", &CsbOptions::K)
      .def_readwrite("grid", &CsbOptions::grid)
      .def_readwrite("L", &CsbOptions::L)
      .def_readwrite("alpha", &CsbOptions::alpha)
      .def_readwrite("clip_eps", &CsbOptions::clip_eps)
      .def_readwrite("use_ivw", &CsbOptions::use_ivw)
      .def_readwrite("seed", &CsbOptions::seed)
      .def_readwrite("workers", &CsbOptions::workers);

  py::class_<MseCurve>(m, "MseCurve")
      .def_readonly("arm", &MseCurve::arm)
      .def_readonly("grid", &MseCurve::grid)
      .def_readonly("mse_hat", &MseCurve::mse_hat)
      .def_readonly("sq_diff", &MseCurve::sq_diff)
      .def_readonly("var_diff", &MseCurve::var_diff)
      .def_readonly("var_csb", &MseCurve::var_csb)
      .def_readonly("L", &MseCurve::L)
      .def_readonly("seed", &MseCurve::seed);

  m.def("estimate_csb_ivw", &estimate_csb_ivw, py::arg("dataset"),
        py::arg("design"), py::arg("pvalues"), py::arg("gamma0"),
        py::arg("gamma1"), py::arg("options") = CsbOptions{});
  m.def("mse_curve", &mse_curve, py::arg("dataset"), py::arg("design"),
        py::arg("pvalues"), py::arg("arm"), py::arg("grid"), py::arg("L"),
        py::arg("seed"), py::arg("options") = CsbOptions{});
  m.def("choose_threshold", &choose_threshold, py::arg("curve"));
  m.def("csb_pipeline", &csb_pipeline, py::arg("dataset"), py::arg("design"),
        py::arg("options"));

  py::class_<RandomizationScheme>(m, "RandomizationScheme")
      .def_static("bernoulli", &RandomizationScheme::bernoulli,
                  py::arg("p") = 0.5)
      .def_static("complete", &RandomizationScheme::complete,
                  py::arg("n1") = -1)
      .def_static("stratified", &RandomizationScheme::stratified,
                  py::arg("strata"),
                  py::arg("n1_by_stratum") = std::map<int, int>{});

  py::class_<FrtResult>(m, "FrtResult")
      .def_readonly("t_obs", &FrtResult::t_obs)
      .def_readonly("draws", &FrtResult::draws)
      .def_readonly("p_two_sided", &FrtResult::p_two_sided)
      .def_readonly("p_one_sided", &FrtResult::p_one_sided)
      .def_readonly("B", &FrtResult::B)
      .def_readonly("seed", &FrtResult::seed)
      .def_readonly("statistic_tag", &FrtResult::statistic_tag)
      .def_readonly("n_failed_draws", &FrtResult::n_failed_draws)
      .def_readonly("exhaustive", &FrtResult::exhaustive);

  m.def("rerandomize_target", &rerandomize_target, py::arg("dataset"),
        py::arg("scheme"), py::arg("seed"));
  // Named-statistic randomization test; the statistic re-runs the full
  // method (including threshold re-selection for CSB) on every draw.
  m.def("frt_pvalue",
        [](const StudyDataset& dataset, const std::string& statistic,
           const RandomizationScheme& scheme, int B, std::uint64_t seed,
           const DesignPropensity& design, const CsbOptions& options,
           int workers) {
          const FrtStatistic stat = [&statistic, &design, &options](
                                        const StudyDataset& d,
                                        const std::vector<int>& a,
                                        std::uint64_t s) {
            CsbOptions draw_opts = options;
            draw_opts.seed = s;
            return run_method(statistic, with_assignment(d, a), design,
                              options.alpha, draw_opts, s)
                .tau_hat;
          };
          return frt_pvalue(dataset, stat, scheme, B, seed, statistic,
                            workers);
        },
        py::arg("dataset"), py::arg("statistic"), py::arg("scheme"),
        py::arg("B"), py::arg("seed"),
        py::arg("design") = DesignPropensity::constant(0.5),
        py::arg("options") = CsbOptions{}, py::arg("workers") = 1);

  py::class_<RegionCovariateMap>(m, "RegionCovariateMap")
      .def(py::init<>())
      .def_readwrite("shared_of", &RegionCovariateMap::shared_of);

  py::class_<RegionEstimates>(m, "RegionEstimates")
      .def_readonly("labels", &RegionEstimates::labels)
      .def_readonly("tau_hats", &RegionEstimates::tau_hats)
      .def_readonly("sigma_hat", &RegionEstimates::sigma_hat)
      .def_readonly("weights", &RegionEstimates::weights)
      .def_readonly("flags", &RegionEstimates::flags);

  m.def("estimate_fb_ivw_region", &estimate_fb_ivw_region, py::arg("dataset"),
        py::arg("design"), py::arg("region"), py::arg("shared"),
        py::arg("alpha") = 0.05, py::arg("clip_eps") = kDefaultClipEps);
  m.def("influence_covariance", &influence_covariance, py::arg("influences"),
        py::arg("n"));
  m.def("optimal_weights",
        [](const Eigen::MatrixXd& sigma) { return optimal_weights(sigma); },
        py::arg("sigma_hat"));
  m.def("estimate_all_regions", &estimate_all_regions, py::arg("dataset"),
        py::arg("design"), py::arg("map"), py::arg("alpha") = 0.05,
        py::arg("clip_eps") = kDefaultClipEps);
  m.def("combine_regions",
        [](const RegionEstimates& estimates) { return combine(estimates); },
        py::arg("estimates"));
  m.def("select_by_region", &select_by_region, py::arg("dataset"),
        py::arg("design"), py::arg("map"), py::arg("options"));

  py::enum_<CovariateScenario>(m, "CovariateScenario")
      .value("independent", CovariateScenario::independent)
      .value("correlated", CovariateScenario::correlated);
  py::enum_<BiasArms>(m, "BiasArms")
      .value("both", BiasArms::both)
      .value("control_only", BiasArms::control_only);

  py::class_<DgpConfig>(m, "DgpConfig")
      .def(py::init<>())
      .def_readwrite("n_target", &DgpConfig::n_target)
      .def_readwrite("n_aux", &DgpConfig::n_aux)
      .def_readwrite("scenario", &DgpConfig::scenario)
      .def_readwrite("eta1", &DgpConfig::eta1)
      .def_readwrite("eta0", &DgpConfig::eta0)
      .def_readwrite("offset1", &DgpConfig::offset1)
      .def_readwrite("offset0", &DgpConfig::offset0)
      .def_readwrite("treat_p", &DgpConfig::treat_p)
      .def_readwrite("beta0", &DgpConfig::beta0)
      .def_readwrite("beta1", &DgpConfig::beta1)
      .def_readwrite("alpha0", &DgpConfig::alpha0)
      .def_readwrite("alpha1", &DgpConfig::alpha1)
      .def_readwrite("eps", &DgpConfig::eps)
      .def_readwrite("target_noise_var", &DgpConfig::target_noise_var)
      .def_readwrite("b0", &DgpConfig::b0)
      .def_readwrite("b1", &DgpConfig::b1)
      .def_readwrite("rho", &DgpConfig::rho)
      .def_readwrite("bias_arms", &DgpConfig::bias_arms)
      .def_readwrite("constant_effect", &DgpConfig::constant_effect)
      .def_readwrite("tau_shift", &DgpConfig::tau_shift)
      .def_readwrite("aux_region_count", &DgpConfig::aux_region_count)
      .def("with_alpha", &DgpConfig::with_alpha, py::arg("alpha0"));

  py::class_<GeneratedTrial>(m, "GeneratedTrial")
      .def_readonly("data", &GeneratedTrial::data)
      .def_readonly("biased", &GeneratedTrial::biased);

  py::class_<McValue>(m, "McValue")
      .def_readonly("value", &McValue::value)
      .def_readonly("mc_se", &McValue::mc_se)
      .def_readonly("flagged", &McValue::flagged);

  m.def("generate_trial", &generate_trial, py::arg("config"), py::arg("seed"));
  m.def("true_rsate", &true_rsate, py::arg("config"), py::arg("n_mc"),
        py::arg("seed"));
  m.def("signal_ratio", &signal_ratio, py::arg("config"), py::arg("n_mc"),
        py::arg("seed"));
  m.def("run_method", &run_method, py::arg("method"), py::arg("dataset"),
        py::arg("design"), py::arg("alpha"), py::arg("csb"), py::arg("seed"));
}
