"""Region-specific treatment effect estimation with selective borrowing.

Thin wrapper around the compiled extension; see the project README for the
full API. The heavy lifting (estimators, conformal p-values, randomization
tests, simulation engine) lives in C++.
"""

from ._core import (  # noqa: F401
    BiasArms,
    CovariateScenario,
    CovariateSchema,
    CsbOptions,
    DesignPropensity,
    DgpConfig,
    FrtResult,
    GeneratedTrial,
    MseCurve,
    PValueTable,
    RandomizationScheme,
    RegionCovariateMap,
    SelectedSet,
    StudyDataset,
    TauEstimate,
    TrialRecord,
    choose_threshold,
    combine_regions,
    compute_pvalues,
    csb_pipeline,
    difference_in_means,
    estimate_all_regions,
    estimate_csb_ivw,
    estimate_fb_ivw,
    estimate_fb_ivw_region,
    estimate_fb_xonly,
    estimate_nb_allcov,
    estimate_nb_xonly,
    frt_pvalue,
    generate_trial,
    load_dataset,
    mse_curve,
    nn_match,
    run_method,
    save_dataset,
    select_by_region,
    select_set,
    signal_ratio,
    true_rsate,
    validate,
)

__version__ = "0.1.0"
