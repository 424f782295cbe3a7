"""Counterfactual cumulative incidence under competing risks via IPW.

The package estimates counterfactual cumulative cause-specific hazards and
cumulative incidence functions by weighting event and at-risk counting
processes with inverse treatment probabilities, and quantifies uncertainty
through influence functions that account for the estimated propensity
score.  A Monte Carlo harness reproduces the method's operating
characteristics at configurable scale.
"""

from .data import Cohort, Subject, WeightVector, build_cohort, make_cohort
from .estimator import IPWNelsonAalen
from .exceptions import (ConvergenceError, DegenerateFitError, EstimationError,
                         FitError, HorizonWarning, PositivityWarning,
                         SeparationError, UnsupportedModelError, ValidationError)
from .hazard import (CIFEstimate, HazardEstimate, adjusted_nelson_aalen, ate,
                     cumulative_incidence)
from .inference import (AugmentationTerm, BootstrapResult, IFMatrix,
                        MartingaleResiduals, VarianceReport, augmentation,
                        bootstrap_se, if_ate, if_cif, if_hazard_corrected,
                        if_hazard_naive, if_hazard_oracle, martingale_residuals,
                        variance_corrected, variance_naive,
                        variance_oracle_finite_sample, wald_interval)
from .propensity import (FittedPropensity, InfluenceVectors, fit_constant,
                         fit_logistic, fit_probit, fit_propensity,
                         influence_vectors, ipw_weights, known_propensity,
                         ps_gradient)
from .reports import (EstimateRequest, Report, build_report, load_sim_config,
                      read_cohort_csv, read_report_json, read_scores_csv,
                      write_mc_tables, write_report_csv, write_report_json)
from .simulation import (ArmSpec, DGPConfig, LatentTruth, MCReport, TruthTable,
                         potential_event_time, run_monte_carlo, run_sensitivity,
                         sample_cohort, truth_oracle)
from .stepfun import StepFunction, eval_step, eval_step_left

__version__ = "0.1.0"

__all__ = [
    "Cohort", "Subject", "WeightVector", "build_cohort", "make_cohort",
    "IPWNelsonAalen",
    "StepFunction", "eval_step", "eval_step_left",
    "FittedPropensity", "InfluenceVectors", "fit_logistic", "fit_probit",
    "fit_constant", "fit_propensity", "known_propensity", "ps_gradient",
    "influence_vectors", "ipw_weights",
    "HazardEstimate", "CIFEstimate", "adjusted_nelson_aalen",
    "cumulative_incidence", "ate",
    "MartingaleResiduals", "IFMatrix", "AugmentationTerm", "VarianceReport",
    "BootstrapResult", "martingale_residuals", "if_hazard_oracle",
    "if_hazard_naive", "if_hazard_corrected", "augmentation", "if_cif",
    "if_ate", "variance_naive", "variance_corrected",
    "variance_oracle_finite_sample", "wald_interval", "bootstrap_se",
    "ArmSpec", "DGPConfig", "LatentTruth", "TruthTable", "MCReport",
    "potential_event_time", "sample_cohort", "truth_oracle",
    "run_monte_carlo", "run_sensitivity",
    "EstimateRequest", "Report", "build_report", "read_cohort_csv",
    "read_scores_csv", "read_report_json", "write_report_json",
    "write_report_csv", "write_mc_tables", "load_sim_config",
    "ValidationError", "FitError", "ConvergenceError", "SeparationError",
    "DegenerateFitError", "UnsupportedModelError", "EstimationError",
    "PositivityWarning", "HorizonWarning",
    "__version__",
]
