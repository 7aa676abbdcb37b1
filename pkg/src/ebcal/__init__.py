"""Empirical-Bayes combination of experimental, observational, and calibration studies.

The package estimates a causal effect by pooling one randomized experiment
with many observational studies whose biases are modeled as draws from a
Gaussian population.  Calibration studies (observational designs of a
known-null effect) identify that bias population, turning otherwise
uninformative observational evidence into usable signal.
"""

from .studies import (
    BiasPrior,
    GaussianPosterior,
    InputError,
    StudyCollection,
    StudySummary,
    UnitRecord,
    read_studies_csv,
    read_summaries_csv,
    validate_collection,
    write_posterior_json,
    write_studies_csv,
)
from .posterior import (
    posterior_ceb,
    posterior_flat,
    posterior_given_prior,
    posterior_quadrature_oracle,
    posterior_zero_mean,
)
from .priorfit import (
    FitReport,
    calibration_loglik,
    fit_mle_calibration,
    fit_mle_illusion,
    fit_mle_zero_mean,
    fit_mm_calibration,
    fit_mm_zero_mean,
    fit_sure,
    internal_eb_theta,
    marginal_loglik,
    profiled_mu,
    shrink_biases,
)
from .estimators import (
    CalibratedEBCombiner,
    FlatPriorCombiner,
    FullEBCombiner,
    InternalCalibrationCombiner,
    ZeroMeanEBCombiner,
)
from .withinstudy import (
    UnitDataset,
    bootstrap_variance,
    difference_in_means,
    ipw_estimate,
    matching_estimate,
)
from .semisynth import DgpConfig, run_pipeline
from .simulate import SimConfig, SimResult, generate_collection, loglog_slope, run_sweep
from .allocate import Allocation, AllocationProblem, solve_bruteforce, solve_greedy

__version__ = "0.1.0"

__all__ = [
    "BiasPrior",
    "GaussianPosterior",
    "InputError",
    "StudyCollection",
    "StudySummary",
    "UnitRecord",
    "UnitDataset",
    "FitReport",
    "read_studies_csv",
    "read_summaries_csv",
    "validate_collection",
    "write_posterior_json",
    "write_studies_csv",
    "posterior_flat",
    "posterior_given_prior",
    "posterior_zero_mean",
    "posterior_ceb",
    "posterior_quadrature_oracle",
    "calibration_loglik",
    "marginal_loglik",
    "profiled_mu",
    "fit_mle_calibration",
    "fit_mle_zero_mean",
    "fit_mle_illusion",
    "fit_mm_calibration",
    "fit_mm_zero_mean",
    "fit_sure",
    "shrink_biases",
    "internal_eb_theta",
    "FlatPriorCombiner",
    "ZeroMeanEBCombiner",
    "FullEBCombiner",
    "CalibratedEBCombiner",
    "InternalCalibrationCombiner",
    "difference_in_means",
    "matching_estimate",
    "ipw_estimate",
    "bootstrap_variance",
    "DgpConfig",
    "run_pipeline",
    "SimConfig",
    "SimResult",
    "generate_collection",
    "run_sweep",
    "loglog_slope",
    "AllocationProblem",
    "Allocation",
    "solve_greedy",
    "solve_bruteforce",
]
