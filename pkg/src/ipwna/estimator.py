"""Fit-shaped front end tying the estimation pipeline together.

`IPWNelsonAalen` follows the scikit-learn estimator protocol: construction
stores hyperparameters verbatim, `fit` consumes the data and stores fitted
state in trailing-underscore attributes, and `get_params`/`set_params`
come from `sklearn.base.BaseEstimator` so the class composes with the
wider ecosystem.  Query methods return curve tables with point estimates,
standard errors per requested method, and Wald intervals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .data import Cohort, make_cohort
from .exceptions import HorizonWarning, ValidationError
from .hazard import ate as ate_curve
from .hazard import union_grid
from .inference import (_fit_arm_cifs, augmentation, bootstrap_se, if_ate,
                        if_cif, if_hazard_corrected, if_hazard_naive,
                        if_hazard_oracle, martingale_residuals,
                        variance_from_if, wald_interval)
from .propensity import fit_propensity, influence_vectors

__all__ = ["IPWNelsonAalen", "CurveTable"]

VARIANCE_METHODS = ("naive", "corrected", "oracle", "bootstrap")
# CI preference when several standard errors were requested
_CI_PREFERENCE = ("corrected", "oracle", "bootstrap", "naive")


@dataclass(frozen=True)
class CurveTable:
    """One estimand evaluated on a time grid, with uncertainty."""

    target: str
    times: np.ndarray
    estimate: np.ndarray
    se: dict
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    se_method: str | None
    pvalue: np.ndarray | None = None


class IPWNelsonAalen(BaseEstimator):
    """Counterfactual cumulative incidence estimation by IPW.

    Parameters
    ----------
    ps_model : {"logistic", "probit", "constant", "known"}
        Propensity-score model for the treatment indicator.
    variance : sequence of {"naive", "corrected", "oracle", "bootstrap"}
        Standard-error methods to compute.  "corrected" accounts for the
        estimated propensity score and needs an estimated model kind;
        "oracle" is only defined for known scores.
    conf_level : float
        Confidence level for Wald intervals.
    bootstrap_reps : int
        Resamples when "bootstrap" is requested.
    random_state : int
        Master seed for bootstrap substreams.

    Examples
    --------
    >>> est = IPWNelsonAalen(ps_model="logistic", variance=("naive", "corrected"))
    >>> est.fit(X, treatment=a, time=t, event=d, n_event_types=2)
    >>> table = est.cumulative_incidence(event=1, arm=1, times=[1.0, 2.0])
    """

    def __init__(self, ps_model="logistic", variance=("corrected",),
                 conf_level=0.95, bootstrap_reps=200, random_state=0):
        self.ps_model = ps_model
        self.variance = variance
        self.conf_level = conf_level
        self.bootstrap_reps = bootstrap_reps
        self.random_state = random_state

    # ------------------------------------------------------------------ fit

    def _validate_methods(self):
        methods = tuple(self.variance)
        if not methods:
            raise ValidationError("at least one variance method is required")
        for m in methods:
            if m not in VARIANCE_METHODS:
                raise ValidationError(f"unknown variance method {m!r}")
        if "corrected" in methods and self.ps_model == "known":
            raise ValidationError(
                "the corrected variance needs an estimated propensity model; "
                "known scores carry no parameter uncertainty")
        if "oracle" in methods and self.ps_model != "known":
            raise ValidationError("the oracle variance requires known scores")
        return methods

    def fit(self, X, treatment=None, time=None, event=None, *,
            n_event_types=None, known_scores=None, t_star=None):
        """Fit the propensity model and estimate both arms' curves.

        Parameters
        ----------
        X : Cohort or array-like of shape (n, p)
            A prebuilt cohort (remaining data arguments are then ignored)
            or the covariate matrix.
        treatment, time, event : array-like of shape (n,)
            Required when `X` is a covariate matrix.
        n_event_types : int, optional
            Number of competing event types; defaults to max(event).
        known_scores : array-like, optional
            Per-subject true treatment probabilities (ps_model="known").
        t_star : float, optional
            Evaluation horizon override.
        """
        methods = self._validate_methods()
        if isinstance(X, Cohort):
            cohort = X
        else:
            if treatment is None or time is None or event is None:
                raise ValidationError(
                    "treatment, time and event are required with array input")
            if n_event_types is None:
                n_event_types = int(np.max(event))
            cohort = make_cohort(treatment=treatment, time=time, event=event,
                                 covariates=X, n_event_types=n_event_types,
                                 ids=None, t_star=t_star)
        self.cohort_ = cohort
        self.propensity_ = fit_propensity(cohort, self.ps_model, known_scores)
        self._known_scores = known_scores
        self.phi_ = (influence_vectors(self.propensity_, cohort)
                     if self.propensity_.kind != "known" else None)

        self.weights_, self.hazards_, self.cifs_ = {}, {}, {}
        self.grids_ = {}
        for arm in (0, 1):
            w, hazards, cifs = _fit_arm_cifs(cohort, self.propensity_, arm)
            self.weights_[arm] = w
            self.hazards_[arm] = hazards
            for j, cif in cifs.items():
                self.cifs_[(arm, j)] = cif
            self.grids_[arm] = union_grid(hazards)

        self._build_if_machinery(methods)
        if "bootstrap" in methods:
            self._run_bootstrap()
        self.n_event_types_ = cohort.n_event_types
        return self

    def _build_if_machinery(self, methods):
        """Influence matrices per (arm, event, kind) and their ATE merges."""
        if_kinds = [m for m in methods if m in ("naive", "corrected", "oracle")]
        self.hazard_ifs_ = {}
        self.cif_ifs_ = {}
        self.ate_ifs_ = {}
        self.hazard_se_ = {}
        self.residuals_ = {}
        self.augmentation_ = {}
        if not if_kinds:
            return
        for arm in (0, 1):
            grid = self.grids_[arm]
            for hz in self.hazards_[arm]:
                res = martingale_residuals(self.cohort_, self.weights_[arm], hz)
                self.residuals_[(arm, hz.event)] = res
                for kind in if_kinds:
                    if kind == "naive":
                        m = if_hazard_naive(res, grid=grid)
                    elif kind == "oracle":
                        m = if_hazard_oracle(self.cohort_, self.weights_[arm],
                                             hz, grid=grid)
                    else:
                        aug = augmentation(self.cohort_, self.propensity_, res, hz)
                        self.augmentation_[(arm, hz.event)] = aug
                        m = if_hazard_corrected(res, aug, self.phi_, grid=grid)
                    self.hazard_ifs_[(arm, hz.event, kind)] = m
                    self.hazard_se_[(arm, hz.event, kind)] = variance_from_if(m)
            for j in range(1, self.cohort_.n_event_types + 1):
                cif = self.cifs_[(arm, j)]
                for kind in if_kinds:
                    mats = [self.hazard_ifs_[(arm, k, kind)]
                            for k in range(1, self.cohort_.n_event_types + 1)]
                    self.cif_ifs_[(arm, j, kind)] = if_cif(mats, cif)
        merged = np.unique(np.concatenate([self.grids_[0], self.grids_[1]]))
        self.ate_grid_ = merged
        for j in range(1, self.cohort_.n_event_types + 1):
            for kind in if_kinds:
                f1 = self.cif_ifs_[(1, j, kind)].at_times(merged)
                f0 = self.cif_ifs_[(0, j, kind)].at_times(merged)
                self.ate_ifs_[(j, kind)] = if_ate(f1, f0)

    def _run_bootstrap(self):
        targets = [("cif", j, a) for a in (0, 1)
                   for j in range(1, self.cohort_.n_event_types + 1)]
        targets += [("ate", j) for j in range(1, self.cohort_.n_event_types + 1)]
        merged = np.unique(np.concatenate([self.grids_[0], self.grids_[1]]))
        result = bootstrap_se(self.cohort_, self.ps_model, targets, merged,
                              reps=self.bootstrap_reps, seed=self.random_state,
                              known_scores=self._known_scores)
        self.bootstrap_ = result

    # -------------------------------------------------------------- queries

    def _check_fitted(self):
        if not hasattr(self, "cohort_"):
            raise ValidationError("estimator is not fitted")

    def _resolve_times(self, times, default_grid):
        if times is None:
            return np.asarray(default_grid, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        beyond = times > self.cohort_.t_star
        if np.any(beyond):
            warnings.warn(
                f"evaluation time beyond the horizon t*={self.cohort_.t_star:g}; "
                "reporting the estimate at the last supported time",
                HorizonWarning, stacklevel=3)
        return times

    def _se_at(self, key_builder, times):
        """Collect per-method standard errors step-evaluated at `times`."""
        out = {}
        for method in self.variance:
            se_step = key_builder(method)
            if se_step is None:
                continue
            idx = np.searchsorted(se_step.grid, times, side="right") - 1
            padded = np.concatenate([[0.0], se_step.se])
            out[method] = padded[idx + 1]
        return out

    def _assemble(self, target, times, estimate, se, pvalue_from_zero=False):
        method = next((m for m in _CI_PREFERENCE if m in se), None)
        if method is None:
            lo = hi = np.full_like(estimate, np.nan)
            pv = None
        else:
            z_se = se[method]
            lo = np.empty_like(estimate)
            hi = np.empty_like(estimate)
            pv = np.empty_like(estimate) if pvalue_from_zero else None
            for i, (est, s) in enumerate(zip(estimate, z_se)):
                lo[i], hi[i], p = wald_interval(float(est), float(s), self.conf_level)
                if pvalue_from_zero:
                    pv[i] = p
        return CurveTable(target=target, times=times, estimate=estimate, se=se,
                          ci_lower=lo, ci_upper=hi, level=self.conf_level,
                          se_method=method, pvalue=pv)

    def cumulative_hazard(self, event, arm, times=None) -> CurveTable:
        """Cause-specific cumulative hazard for one arm."""
        self._check_fitted()
        hz = self.hazards_[arm][event - 1]
        times = self._resolve_times(times, hz.jump_times)
        estimate = np.atleast_1d(hz.cum_hazard(times))

        def lookup(method):
            if method == "bootstrap":
                return None  # bootstrap targets the incidence scale
            return self.hazard_se_.get((arm, event, method))

        se = self._se_at(lookup, times)
        return self._assemble(f"cumhaz[event={event},arm={arm}]", times, estimate, se)

    def cumulative_incidence(self, event, arm, times=None) -> CurveTable:
        """Counterfactual cumulative incidence for one arm."""
        self._check_fitted()
        cif = self.cifs_[(arm, event)]
        times = self._resolve_times(times, self.grids_[arm])
        estimate = np.atleast_1d(cif.cif(times))

        def lookup(method):
            if method == "bootstrap":
                return self.bootstrap_.reports.get(("cif", event, arm))
            m = self.cif_ifs_.get((arm, event, method))
            return None if m is None else variance_from_if(m)

        se = self._se_at(lookup, times)
        return self._assemble(f"cif[event={event},arm={arm}]", times, estimate, se)

    def average_treatment_effect(self, event, times=None) -> CurveTable:
        """Incidence difference between arms, with p-values against zero."""
        self._check_fitted()
        curve = ate_curve(self.cifs_[(1, event)], self.cifs_[(0, event)])
        times = self._resolve_times(times, curve.times)
        estimate = np.atleast_1d(curve(times))

        def lookup(method):
            if method == "bootstrap":
                return self.bootstrap_.reports.get(("ate", event))
            m = self.ate_ifs_.get((event, method))
            return None if m is None else variance_from_if(m)

        se = self._se_at(lookup, times)
        return self._assemble(f"ate[event={event}]", times, estimate, se,
                              pvalue_from_zero=True)

    def survival(self, arm, times=None) -> np.ndarray:
        """Overall survival exp(-sum of cumulative hazards) for one arm."""
        self._check_fitted()
        surv = self.cifs_[(arm, 1)].survival
        times = self._resolve_times(times, surv.times)
        return np.atleast_1d(surv(times))
