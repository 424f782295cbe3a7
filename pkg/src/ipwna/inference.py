"""Influence functions and variance estimation for the weighted estimators.

Everything here is a finite sum over hazard jump times: the empirical
martingale increments

    dM_i(s) = w_i dN_ij(s) - w_i Y_i(s) dLambda_j(s)

sum to zero across subjects at every jump by construction of the hazard
estimate.  Scaling them by the mean weighted at-risk size gives the
plug-in hazard influence functions; when the propensity score was
estimated, an augmentation term driven by the model's parameter influence
vectors is subtracted.  The incidence-scale influence function follows by
the functional delta method with the same left-limit convention the
estimator uses, and treatment-effect inference adds the two arms'
contributions per subject.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Cohort, WeightVector, make_cohort
from .exceptions import (EstimationError, FitError, UnsupportedModelError,
                         ValidationError)
from .hazard import (CIFEstimate, HazardEstimate, adjusted_nelson_aalen,
                     cumulative_incidence, risk_weight_at)
from .propensity import (FittedPropensity, InfluenceVectors, _gradient_matrix,
                         fit_propensity, ipw_weights)

__all__ = [
    "MartingaleResiduals", "IFMatrix", "AugmentationTerm", "VarianceReport",
    "martingale_residuals", "if_hazard_oracle", "if_hazard_naive",
    "if_hazard_corrected", "augmentation", "variance_naive",
    "variance_corrected", "variance_from_if", "variance_oracle_finite_sample",
    "if_cif", "if_ate", "wald_interval", "bootstrap_se", "BootstrapResult",
    "seed_entropy", "substream",
]

_ESTIMATED_KINDS = ("logistic", "probit", "constant")


@dataclass(frozen=True)
class MartingaleResiduals:
    """Per-subject martingale increments at the hazard's jump times.

    `increments[i, g]` is dM_i at jump g; rows of off-arm subjects are
    identically zero, and each column sums to zero.
    """

    arm: int
    event: int
    jump_times: np.ndarray
    increments: np.ndarray
    risk_weight: np.ndarray

    def __post_init__(self):
        for name in ("jump_times", "increments", "risk_weight"):
            getattr(self, name).flags.writeable = False

    @property
    def n(self) -> int:
        return self.increments.shape[0]

    def paths(self, times) -> np.ndarray:
        """Cumulative residual M_i(t) per subject at the requested times."""
        cum = np.cumsum(self.increments, axis=1)
        return _step_columns(cum, self.jump_times, np.asarray(times, dtype=float))


@dataclass(frozen=True)
class IFMatrix:
    """Per-subject influence-function values on a time grid.

    kind is "oracle" (known propensity score), "naive" (estimated score,
    uncertainty ignored) or "corrected" (estimated score, augmented).
    """

    grid: np.ndarray
    values: np.ndarray
    kind: str
    estimand: str

    def __post_init__(self):
        self.grid.flags.writeable = False
        self.values.flags.writeable = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def at_times(self, times) -> "IFMatrix":
        """Step-evaluate the per-subject IF paths on a new grid."""
        times = np.asarray(times, dtype=float)
        return IFMatrix(grid=times,
                        values=_step_columns(self.values, self.grid, times),
                        kind=self.kind, estimand=self.estimand)

    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)


@dataclass(frozen=True)
class AugmentationTerm:
    """Cumulative augmentation vector b(t) driven by the estimated score model.

    b(t) accumulates (1 / mean weighted at-risk) times the empirical average
    of dM_i(s) times the relative score gradient, over jumps s <= t.  It is
    identically zero when the gradient-over-square is constant across
    subjects (the constant-model case).
    """

    jump_times: np.ndarray
    b: np.ndarray  # (n_jumps, dim theta), cumulative

    def __post_init__(self):
        self.jump_times.flags.writeable = False
        self.b.flags.writeable = False

    def at_times(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return _step_columns(self.b.T, self.jump_times, times).T


@dataclass(frozen=True)
class VarianceReport:
    """Standard errors of one estimand on a time grid."""

    grid: np.ndarray
    se: np.ndarray
    method: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid.flags.writeable = False
        self.se.flags.writeable = False


def _step_columns(values, jump_times, times):
    """Evaluate row-wise step paths (columns at `jump_times`) at `times`."""
    idx = np.searchsorted(jump_times, times, side="right") - 1
    padded = np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)
    return padded[:, idx + 1]


def _check_same_weights(cohort, weights, hazard):
    recomputed = risk_weight_at(cohort.time, weights.weights, hazard.jump_times)
    if hazard.arm != weights.arm or not np.allclose(
            recomputed, hazard.risk_weight_at_jump, rtol=1e-12, atol=1e-12):
        raise ValidationError("hazard estimate was not built from these weights")


def martingale_residuals(cohort: Cohort, weights: WeightVector,
                         hazard: HazardEstimate) -> MartingaleResiduals:
    """Empirical martingale increments dM_i(s) at every hazard jump."""
    _check_same_weights(cohort, weights, hazard)
    w = weights.weights
    grid = hazard.jump_times
    d_lambda = hazard.increments
    at_risk = cohort.time[:, None] >= grid[None, :]
    inc = -(w[:, None] * at_risk) * d_lambda[None, :]
    is_event = (cohort.event == hazard.event) & (w > 0)
    rows = np.flatnonzero(is_event)
    if grid.size and rows.size:
        cols = np.searchsorted(grid, cohort.time[rows])
        keep = (cols < grid.size) & (
            grid[np.minimum(cols, grid.size - 1)] == cohort.time[rows])
        inc[rows[keep], cols[keep]] += w[rows[keep]]
    return MartingaleResiduals(arm=hazard.arm, event=hazard.event,
                               jump_times=grid, increments=inc,
                               risk_weight=hazard.risk_weight_at_jump.copy())


def _hazard_if_values(residuals: MartingaleResiduals) -> np.ndarray:
    """Cumulative dM_i(s) / (mean weighted at-risk at s), on the jump grid."""
    n = residuals.n
    psi2_bar = residuals.risk_weight / n
    return np.cumsum(residuals.increments / psi2_bar[None, :], axis=1)


def if_hazard_oracle(cohort: Cohort, weights: WeightVector,
                     hazard: HazardEstimate, grid=None) -> IFMatrix:
    """Hazard-scale influence functions when the propensity score is known.

    Estimated-score weights must go through the corrected path instead.
    """
    if weights.source in _ESTIMATED_KINDS:
        raise UnsupportedModelError(
            "weights come from an estimated propensity score; "
            "use the corrected influence function")
    residuals = martingale_residuals(cohort, weights, hazard)
    values = _hazard_if_values(residuals)
    out = IFMatrix(grid=hazard.jump_times.copy(), values=values, kind="oracle",
                   estimand=f"cumhaz[event={hazard.event},arm={hazard.arm}]")
    return out if grid is None else out.at_times(grid)


def augmentation(cohort: Cohort, model: FittedPropensity,
                 residuals: MartingaleResiduals, hazard: HazardEstimate,
                 grid=None) -> AugmentationTerm:
    """Accumulate the correction vector for an estimated propensity score.

    At each jump s the empirical average of dM_i(s) times
    grad e(a; X_i) / e(a; X_i)^2 is scaled by the mean weighted at-risk size
    and added to the running vector.
    """
    if model.kind == "known":
        raise UnsupportedModelError("known scores need no augmentation")
    if model.kind not in _ESTIMATED_KINDS:
        raise UnsupportedModelError(f"unknown model kind {model.kind!r}")
    arm = hazard.arm
    rel_grad = _gradient_matrix(model, cohort.covariates, arm)
    rel_grad = rel_grad / (model.scores(arm) ** 2)[:, None]
    # The residual increments sum to zero at each jump, so shifting the
    # relative gradients by any constant row leaves the average unchanged;
    # anchoring on the first row makes the constant-model term vanish
    # exactly in floating point.
    rel_grad = rel_grad - rel_grad[0]
    n = residuals.n
    v = residuals.increments.T @ rel_grad / n          # (n_jumps, q)
    psi2_bar = residuals.risk_weight / n
    b = np.cumsum(v / psi2_bar[:, None], axis=0)
    term = AugmentationTerm(jump_times=residuals.jump_times.copy(), b=b)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        term = AugmentationTerm(jump_times=grid, b=term.at_times(grid))
    return term


def if_hazard_corrected(residuals: MartingaleResiduals, augment: AugmentationTerm,
                        phi: InfluenceVectors, grid=None) -> IFMatrix:
    """Hazard-scale influence functions accounting for the estimated score.

    Per subject: the plug-in martingale term minus b(t)' phi_i.
    """
    if phi.phi.shape[0] != residuals.n:
        raise ValidationError("influence vectors do not match the cohort size")
    if augment.b.shape[1] != phi.phi.shape[1]:
        raise ValidationError("augmentation and influence vectors disagree on dim(theta)")
    if augment.jump_times.shape != residuals.jump_times.shape or \
            not np.array_equal(augment.jump_times, residuals.jump_times):
        raise ValidationError("augmentation grid does not match the residual grid")
    values = _hazard_if_values(residuals) - phi.phi @ augment.b.T
    out = IFMatrix(grid=residuals.jump_times.copy(), values=values, kind="corrected",
                   estimand=f"cumhaz[event={residuals.event},arm={residuals.arm}]")
    return out if grid is None else out.at_times(grid)


def if_hazard_naive(residuals: MartingaleResiduals, grid=None) -> IFMatrix:
    """Plug-in hazard influence functions that ignore score-model uncertainty."""
    values = _hazard_if_values(residuals)
    out = IFMatrix(grid=residuals.jump_times.copy(), values=values, kind="naive",
                   estimand=f"cumhaz[event={residuals.event},arm={residuals.arm}]")
    return out if grid is None else out.at_times(grid)


def _corrected_from_naive(naive_mat: IFMatrix, augment: AugmentationTerm,
                          phi: InfluenceVectors) -> IFMatrix:
    """Corrected IF from an already-evaluated naive matrix (same grid).

    Subtracting phi_i' b(t) commutes with step evaluation, so this equals
    `if_hazard_corrected(...).at_times(naive_mat.grid)` without redoing the
    cumulative sums.
    """
    b_at = augment.at_times(naive_mat.grid)
    return IFMatrix(grid=naive_mat.grid.copy(),
                    values=naive_mat.values - phi.phi @ b_at.T,
                    kind="corrected", estimand=naive_mat.estimand)


def variance_from_if(if_matrix: IFMatrix, extras=None) -> VarianceReport:
    """Sample second moment of the IF columns over n^2, as standard errors."""
    n = if_matrix.n
    var = np.sum(if_matrix.values ** 2, axis=0) / n ** 2
    return VarianceReport(grid=if_matrix.grid.copy(), se=np.sqrt(var),
                          method=if_matrix.kind, extras=extras or {})


def variance_naive(residuals: MartingaleResiduals, hazard: HazardEstimate,
                   grid=None) -> VarianceReport:
    """Hazard-scale variance that ignores the estimated score's uncertainty."""
    return variance_from_if(if_hazard_naive(residuals, grid=grid))


def variance_corrected(if_corrected: IFMatrix, augment=None) -> VarianceReport:
    """Variance from the corrected (or any) influence-function matrix."""
    extras = {"augmentation": augment} if augment is not None else {}
    return variance_from_if(if_corrected, extras=extras)


def variance_oracle_finite_sample(cohort: Cohort, weights: WeightVector,
                                  hazard: HazardEstimate, grid=None) -> VarianceReport:
    """Unbiased finite-sample variance of the hazard under a known score.

    The empirical counterpart of the martingale variance: at each jump,
    mean(w^2 Y) dLambda / mean(w Y)^2, summed and divided by n.  With unit
    weights this reduces to the classical Nelson-Aalen variance sum
    dN / Y^2.
    """
    if weights.source in _ESTIMATED_KINDS:
        raise UnsupportedModelError(
            "weights come from an estimated propensity score; the oracle "
            "finite-sample variance is undefined")
    _check_same_weights(cohort, weights, hazard)
    n = cohort.n
    w = weights.weights
    sq_risk = risk_weight_at(cohort.time, w * w, hazard.jump_times)
    psi2_bar = hazard.risk_weight_at_jump / n
    increments = (sq_risk / n) * hazard.increments / psi2_bar ** 2 / n
    var = np.cumsum(increments)
    report = VarianceReport(grid=hazard.jump_times.copy(), se=np.sqrt(var),
                            method="oracle-finite-sample")
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        se = _step_columns(report.se[None, :], report.grid, grid)[0]
        report = VarianceReport(grid=grid, se=se, method=report.method)
    return report


def if_cif(hazard_ifs, cif: CIFEstimate) -> IFMatrix:
    """Incidence-scale influence functions by the functional delta method.

    Parameters
    ----------
    hazard_ifs : sequence of IFMatrix
        One hazard-scale IF matrix per event type, all evaluated on the
        union jump grid that `cif` lives on.
    cif : CIFEstimate

    The first term accumulates survival(s-) times the IF increments of the
    target event's hazard; the second subtracts each hazard IF's left limit
    times the incidence increments.  Left limits mirror the estimator's
    convention, so this linearization is the exact directional derivative
    of the plug-in transform.
    """
    grid = cif.cif.times
    by_event = {m.estimand: m for m in hazard_ifs}
    if len(by_event) != len(hazard_ifs):
        raise ValidationError("duplicate hazard IF matrices")
    kinds = {m.kind for m in hazard_ifs}
    if len(kinds) != 1:
        raise ValidationError("hazard IF matrices mix kinds")
    for m in hazard_ifs:
        if m.grid.shape != grid.shape or not np.array_equal(m.grid, grid):
            raise ValidationError("hazard IF matrices must live on the union jump grid")
    target = next(m for m in hazard_ifs
                  if m.estimand == f"cumhaz[event={cif.event},arm={cif.arm}]")

    surv_before = np.concatenate([[1.0], cif.survival.values[:-1]])
    d_if_target = np.diff(target.values, axis=1, prepend=0.0)
    first = np.cumsum(d_if_target * surv_before[None, :], axis=1)
    d_cif = np.diff(cif.cif.values, prepend=0.0)
    second = np.zeros_like(first)
    for m in hazard_ifs:
        left = np.concatenate(
            [np.zeros((m.values.shape[0], 1)), m.values[:, :-1]], axis=1)
        second += np.cumsum(left * d_cif[None, :], axis=1)
    return IFMatrix(grid=grid.copy(), values=first - second, kind=kinds.pop(),
                    estimand=f"cif[event={cif.event},arm={cif.arm}]")


def if_cif_at(hazard_ifs, cif: CIFEstimate, times) -> IFMatrix:
    """`if_cif(...).at_times(times)` without materializing the full grid.

    The two delta-method sums are evaluated only at the requested times by
    weighting the grid columns with masked survival / incidence-increment
    vectors; the arithmetic is the same finite sum as `if_cif`.
    """
    grid = cif.cif.times
    kinds = {m.kind for m in hazard_ifs}
    if len(kinds) != 1:
        raise ValidationError("hazard IF matrices mix kinds")
    for m in hazard_ifs:
        if m.grid.shape != grid.shape or not np.array_equal(m.grid, grid):
            raise ValidationError("hazard IF matrices must live on the union jump grid")
    times = np.asarray(times, dtype=float)
    target = next(m for m in hazard_ifs
                  if m.estimand == f"cumhaz[event={cif.event},arm={cif.arm}]")
    mask = grid[:, None] <= times[None, :]                      # (G, K)
    surv_before = np.concatenate([[1.0], cif.survival.values[:-1]])
    d_cif = np.diff(cif.cif.values, prepend=0.0)
    w_first = surv_before[:, None] * mask
    w_second = d_cif[:, None] * mask
    # left limit: IF(s-) at jump g is the value at g-1, so shift the weights up
    w_second = np.vstack([w_second[1:], np.zeros((1, times.size))]) \
        if grid.size else np.zeros((0, times.size))
    d_if_target = np.diff(target.values, axis=1, prepend=0.0)
    values = d_if_target @ w_first
    for m in hazard_ifs:
        values -= m.values @ w_second
    return IFMatrix(grid=times, values=values, kind=kinds.pop(),
                    estimand=f"cif[event={cif.event},arm={cif.arm}]")


def if_ate(if_f1: IFMatrix, if_f0: IFMatrix) -> IFMatrix:
    """Influence functions of the incidence difference (arm 1 minus arm 0).

    Each subject contributes its own arm's martingale term and, for
    estimated scores, both arms' augmentation through the shared phi.
    """
    if if_f1.grid.shape != if_f0.grid.shape or not np.array_equal(if_f1.grid, if_f0.grid):
        raise ValidationError("influence matrices live on different grids")
    if if_f1.values.shape[0] != if_f0.values.shape[0]:
        raise ValidationError("influence matrices cover different cohorts")
    if if_f1.kind != if_f0.kind:
        raise ValidationError("influence matrices mix kinds")
    event = if_f1.estimand.split("event=")[1].split(",")[0]
    return IFMatrix(grid=if_f1.grid.copy(), values=if_f1.values - if_f0.values,
                    kind=if_f1.kind, estimand=f"ate[event={event}]")


def wald_interval(estimate: float, se: float, level: float = 0.95):
    """Normal-theory confidence interval and two-sided p-value for H0: zero.

    Returns (lower, upper, pvalue) at the given confidence level.
    """
    if se < 0:
        raise ValidationError("standard error must be nonnegative")
    z = ndtri(0.5 + level / 2.0)
    lo, hi = estimate - z * se, estimate + z * se
    if se == 0.0:
        return lo, hi, (1.0 if estimate == 0.0 else 0.0)
    return lo, hi, float(2.0 * ndtr(-abs(estimate) / se))


def seed_entropy(seed) -> tuple:
    """Normalize a seed (int or tuple of ints) for counter-based substreams."""
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def substream(seed, *counters) -> np.random.Generator:
    """Independent generator for a counter-indexed substream of `seed`.

    The stream depends only on (seed, counters), never on execution order,
    so parallel schedules reproduce serial results bit for bit.
    """
    return np.random.default_rng(np.random.SeedSequence(seed_entropy(seed) + counters))


_BOOT_TAG = 0x626F6F74  # namespaces bootstrap substreams


def _fit_arm_cifs(cohort: Cohort, model: FittedPropensity, arm: int):
    """Point-estimation pipeline for one arm: weights, all hazards, all CIFs."""
    w = ipw_weights(model, cohort, arm)
    hazards = [adjusted_nelson_aalen(cohort, w, j)
               for j in range(1, cohort.n_event_types + 1)]
    cifs = {j: cumulative_incidence(hazards, j)
            for j in range(1, cohort.n_event_types + 1)}
    return w, hazards, cifs


@dataclass(frozen=True)
class BootstrapResult:
    """Per-target bootstrap variance reports plus the failed-rep counter."""

    reports: dict
    reps: int
    failures: int


def bootstrap_se(cohort: Cohort, ps_kind: str, targets, grid, reps: int, seed,
                 known_scores=None, max_failure_frac: float = 0.2) -> BootstrapResult:
    """Nonparametric bootstrap standard errors of CIFs and treatment effects.

    Subjects are resampled with replacement; the propensity model (same
    kind) is refitted on every resample and the point estimates recomputed.
    Resamples that cannot be estimated (single-arm draws, separation) are
    skipped and counted; more than `max_failure_frac` failures is an error.

    Parameters
    ----------
    targets : sequence
        Entries ("cif", event, arm) or ("ate", event).
    grid : array-like
        Times at which the standard errors are reported.
    seed : int or tuple of int
        Master seed; resample b uses the (seed, b) substream, so the result
        is deterministic for any execution order.
    """
    if reps < 2:
        raise ValidationError("at least two bootstrap replications are required")
    targets = [tuple(t) for t in targets]
    grid = np.asarray(grid, dtype=float)
    arms_needed = sorted({t[2] for t in targets if t[0] == "cif"}
                         | ({0, 1} if any(t[0] == "ate" for t in targets) else set()))
    n = cohort.n
    draws = {t: [] for t in targets}
    failures = 0
    for b in range(reps):
        rng = substream(seed, _BOOT_TAG, b)
        idx = rng.integers(0, n, size=n)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                boot = make_cohort(treatment=cohort.treatment[idx],
                                   time=cohort.time[idx], event=cohort.event[idx],
                                   covariates=cohort.covariates[idx],
                                   n_event_types=cohort.n_event_types,
                                   t_star=cohort.t_star)
                scores = None if known_scores is None else np.asarray(known_scores)[idx]
                model = fit_propensity(boot, ps_kind, known_scores=scores)
                cifs = {a: _fit_arm_cifs(boot, model, a)[2] for a in arms_needed}
        except (ValidationError, EstimationError, FitError):
            failures += 1
            continue
        for t in targets:
            if t[0] == "cif":
                _, event, arm = t
                draws[t].append(cifs[arm][event].cif(grid))
            else:
                _, event = t
                draws[t].append(cifs[1][event].cif(grid) - cifs[0][event].cif(grid))
    if failures > max_failure_frac * reps:
        raise EstimationError(
            f"{failures} of {reps} bootstrap resamples failed to estimate")
    reports = {}
    for t in targets:
        stacked = np.vstack(draws[t]) if draws[t] else np.empty((0, grid.size))
        se = stacked.std(axis=0, ddof=1) if stacked.shape[0] >= 2 else np.full(grid.size, np.nan)
        reports[t] = VarianceReport(grid=grid.copy(), se=se, method="bootstrap",
                                    extras={"failures": failures, "reps": reps})
    return BootstrapResult(reports=reports, reps=reps, failures=failures)
