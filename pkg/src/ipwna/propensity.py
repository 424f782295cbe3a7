"""Propensity-score models and their influence vectors.

Four model kinds are supported: logistic and probit regression on the
cohort covariates (intercept first), a constant (covariate-free) Bernoulli
probability, and externally supplied "known" scores.  Every fitted kind
exposes the treatment probability e(a; x), its parameter gradient, the
per-subject influence vectors of the parameter estimate, and IPW weight
vectors.  Known scores expose weights only; there is no parameter
uncertainty to propagate, so the corrected-variance path is disabled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .data import Cohort, WeightVector
from .exceptions import (ConvergenceError, DegenerateFitError, PositivityWarning,
                         SeparationError, UnsupportedModelError, ValidationError)

__all__ = [
    "FittedPropensity", "InfluenceVectors", "PSDiagnostics",
    "fit_logistic", "fit_probit", "fit_constant", "known_propensity",
    "fit_propensity", "ps_gradient", "influence_vectors", "ipw_weights",
]

MAX_ITER = 100
GRADIENT_TOL = 1e-10
SEPARATION_EPS = 1e-10
POSITIVITY_BAND = 1e-8

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


@dataclass(frozen=True)
class PSDiagnostics:
    """Fit diagnostics carried by a `FittedPropensity`."""

    min_score: float
    max_score: float
    n_iter: int
    gradient_norm: float
    warnings: tuple = ()


@dataclass(frozen=True)
class FittedPropensity:
    """A fitted treatment-probability model.

    Attributes
    ----------
    kind : {"logistic", "probit", "constant", "known"}
    theta : ndarray
        Model parameters; intercept first for logistic/probit, a single
        probability for constant, empty for known scores.
    fitted_scores : ndarray of shape (n,)
        e(1; X_i) per subject.
    info_inverse : ndarray or None
        Inverse of the empirical information matrix (None for known).
    diagnostics : PSDiagnostics
    """

    kind: str
    theta: np.ndarray
    fitted_scores: np.ndarray
    info_inverse: np.ndarray | None
    diagnostics: PSDiagnostics

    def __post_init__(self):
        self.theta.flags.writeable = False
        self.fitted_scores.flags.writeable = False
        if self.info_inverse is not None:
            self.info_inverse.flags.writeable = False

    def scores(self, a: int) -> np.ndarray:
        """Per-subject e(a; X_i); e(0; x) = 1 - e(1; x) exactly."""
        return self.fitted_scores if a == 1 else 1.0 - self.fitted_scores


@dataclass(frozen=True)
class InfluenceVectors:
    """Per-subject influence vectors of the fitted parameters (n x dim(theta))."""

    phi: np.ndarray

    def __post_init__(self):
        self.phi.flags.writeable = False


def _design(cohort: Cohort) -> np.ndarray:
    return np.hstack([np.ones((cohort.n, 1)), cohort.covariates])


def _positivity_warnings(scores) -> tuple:
    if np.any(scores < POSITIVITY_BAND) or np.any(scores > 1.0 - POSITIVITY_BAND):
        msg = ("fitted propensity scores fall outside "
               f"[{POSITIVITY_BAND:g}, 1-{POSITIVITY_BAND:g}]; positivity is suspect")
        warnings.warn(msg, PositivityWarning, stacklevel=3)
        return (msg,)
    return ()


def _newton_fit(design, a, link):
    """Maximize the Bernoulli likelihood by Newton steps with step halving.

    `link` maps the linear predictor to (probability, log-likelihood,
    score vector, information matrix).  Returns
    (theta, scores, info, n_iter, gradient_norm).
    """
    n, q = design.shape
    if np.linalg.matrix_rank(design) < q:
        raise ValidationError("design matrix is rank deficient")
    theta = np.zeros(q)
    prob, loglik, score, info = link(design, a, theta)
    for it in range(MAX_ITER):
        grad_norm = float(np.max(np.abs(score)))
        if grad_norm < GRADIENT_TOL:
            return theta, prob, info, it, grad_norm
        if np.any(prob < SEPARATION_EPS) or np.any(prob > 1.0 - SEPARATION_EPS):
            raise SeparationError(
                "fitted scores reached 0/1 before the score equation was "
                "solved; the arms appear separated")
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix during fitting") from None
        # step halving on likelihood decrease; the slack keeps float noise in
        # the log-likelihood from rejecting honest steps near the optimum
        slack = 1e-10 * (abs(loglik) + 1.0)
        scale = 1.0
        for _ in range(40):
            cand = theta + scale * step
            prob_c, loglik_c, score_c, info_c = link(design, a, cand)
            if loglik_c >= loglik - slack or scale < 1e-12:
                break
            scale /= 2.0
        theta, prob, loglik, score, info = cand, prob_c, loglik_c, score_c, info_c
    raise ConvergenceError(
        f"no convergence after {MAX_ITER} Newton iterations "
        f"(last max-abs score {np.max(np.abs(score)):.3e})",
        gradient_norm=float(np.max(np.abs(score))))


def _logistic_link(design, a, theta):
    eta = design @ theta
    prob = expit(eta)
    # log-likelihood up to a constant, stable for large |eta|
    loglik = float(np.sum(a * eta - np.logaddexp(0.0, eta)))
    resid = a - prob
    score = design.T @ resid
    w = prob * (1.0 - prob)
    info = design.T @ (design * w[:, None])
    return prob, loglik, score, info


def _probit_link(design, a, theta):
    eta = design @ theta
    prob = ndtr(eta)
    upper = ndtr(-eta)  # 1 - prob without cancellation
    with np.errstate(divide="ignore"):
        loglik = float(np.sum(np.where(a == 1, np.log(prob), np.log(upper))))
    pdf = _norm_pdf(eta)
    lam = pdf / np.clip(prob * upper, 1e-300, None)
    score = design.T @ ((a - prob) * lam)
    info = design.T @ (design * (pdf * lam)[:, None])
    return prob, loglik, score, info


def _finish_fit(kind, theta, prob, info, n_iter, grad_norm, n) -> FittedPropensity:
    info_inv = np.linalg.inv(info / n)
    diag = PSDiagnostics(min_score=float(prob.min()), max_score=float(prob.max()),
                         n_iter=n_iter, gradient_norm=grad_norm,
                         warnings=_positivity_warnings(prob))
    return FittedPropensity(kind=kind, theta=np.asarray(theta, dtype=float),
                            fitted_scores=np.asarray(prob, dtype=float),
                            info_inverse=info_inv, diagnostics=diag)


def fit_logistic(cohort: Cohort) -> FittedPropensity:
    """Fit e(1; x) = expit(theta0 + x' theta1) by maximum likelihood."""
    design = _design(cohort)
    a = cohort.treatment.astype(float)
    theta, prob, info, n_iter, grad_norm = _newton_fit(design, a, _logistic_link)
    return _finish_fit("logistic", theta, prob, info, n_iter, grad_norm, cohort.n)


def fit_probit(cohort: Cohort) -> FittedPropensity:
    """Fit e(1; x) = Phi(theta0 + x' theta1) by maximum likelihood."""
    design = _design(cohort)
    a = cohort.treatment.astype(float)
    theta, prob, info, n_iter, grad_norm = _newton_fit(design, a, _probit_link)
    return _finish_fit("probit", theta, prob, info, n_iter, grad_norm, cohort.n)


def fit_constant(cohort: Cohort) -> FittedPropensity:
    """Fit a covariate-free treatment probability: theta = mean(A)."""
    a = cohort.treatment.astype(float)
    theta = float(a.mean())
    if theta <= 0.0 or theta >= 1.0:
        raise DegenerateFitError("constant propensity fit is degenerate: "
                                 "all subjects share one treatment arm")
    prob = np.full(cohort.n, theta)
    info_inv = np.array([[1.0 / (theta * (1.0 - theta))]])
    diag = PSDiagnostics(min_score=theta, max_score=theta, n_iter=0,
                         gradient_norm=0.0, warnings=_positivity_warnings(prob))
    return FittedPropensity(kind="constant", theta=np.array([theta]),
                            fitted_scores=prob, info_inverse=info_inv,
                            diagnostics=diag)


def known_propensity(cohort: Cohort, scores) -> FittedPropensity:
    """Wrap externally known treatment probabilities (for example a trial design).

    No parameters were estimated, so there are no influence vectors and the
    corrected-variance path is unavailable for this kind.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (cohort.n,):
        raise ValidationError("known scores must supply one value per subject")
    if np.any(~np.isfinite(scores)) or np.any(scores <= 0.0) or np.any(scores >= 1.0):
        bad = np.flatnonzero(~((scores > 0.0) & (scores < 1.0)))
        raise ValidationError(f"known score outside (0,1) at row {bad[0]}")
    diag = PSDiagnostics(min_score=float(scores.min()), max_score=float(scores.max()),
                         n_iter=0, gradient_norm=0.0,
                         warnings=_positivity_warnings(scores))
    return FittedPropensity(kind="known", theta=np.empty(0), fitted_scores=scores,
                            info_inverse=None, diagnostics=diag)


def fit_propensity(cohort: Cohort, kind: str, known_scores=None) -> FittedPropensity:
    """Dispatch to the requested model kind."""
    if kind == "logistic":
        return fit_logistic(cohort)
    if kind == "probit":
        return fit_probit(cohort)
    if kind == "constant":
        return fit_constant(cohort)
    if kind == "known":
        if known_scores is None:
            raise ValidationError("known scores were not supplied")
        return known_propensity(cohort, known_scores)
    raise ValidationError(f"unknown propensity model kind {kind!r}")


def _gradient_matrix(model: FittedPropensity, covariates, a: int) -> np.ndarray:
    """Rows d e(a; x_i; theta)/d theta, vectorized over subjects."""
    if model.kind == "known":
        raise UnsupportedModelError("known scores have no parameter gradient")
    if model.kind == "constant":
        sign = 1.0 if a == 1 else -1.0
        return np.full((covariates.shape[0], 1), sign)
    design = np.hstack([np.ones((covariates.shape[0], 1)), covariates])
    eta = design @ model.theta
    if model.kind == "logistic":
        e1 = expit(eta)
        factor = e1 * (1.0 - e1)
    elif model.kind == "probit":
        factor = _norm_pdf(eta)
    else:
        raise UnsupportedModelError(f"unknown model kind {model.kind!r}")
    if a == 0:
        factor = -factor
    return design * factor[:, None]


def ps_gradient(model: FittedPropensity, x, a: int) -> np.ndarray:
    """Gradient of e(a; x; theta) in theta at the fitted parameters."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return _gradient_matrix(model, x, a)[0]


def _score_matrix(model: FittedPropensity, cohort: Cohort) -> np.ndarray:
    """Per-subject score rows whose empirical sum is zero at the fit."""
    a = cohort.treatment.astype(float)
    if model.kind == "constant":
        return (a - model.theta[0])[:, None]
    design = _design(cohort)
    if model.kind == "logistic":
        return design * (a - model.fitted_scores)[:, None]
    if model.kind == "probit":
        eta = design @ model.theta
        prob = ndtr(eta)
        lam = _norm_pdf(eta) / np.clip(prob * ndtr(-eta), 1e-300, None)
        return design * ((a - prob) * lam)[:, None]
    raise UnsupportedModelError("influence vectors are undefined for known scores")


def influence_vectors(model: FittedPropensity, cohort: Cohort) -> InfluenceVectors:
    """Per-subject influence vectors phi_i = info_inverse @ score_i.

    Column sums vanish (within solver tolerance) because the score equation
    holds at the fit.
    """
    if model.kind == "known":
        raise UnsupportedModelError("influence vectors are undefined for known scores")
    phi = _score_matrix(model, cohort) @ model.info_inverse.T
    return InfluenceVectors(phi=phi)


def ipw_weights(model: FittedPropensity, cohort: Cohort, a: int) -> WeightVector:
    """Weights 1{A_i = a} / e(a; X_i; theta-hat); zero off the target arm."""
    if a not in (0, 1):
        raise ValidationError("arm must be 0 or 1")
    on_arm = cohort.treatment == a
    w = np.zeros(cohort.n)
    w[on_arm] = 1.0 / model.scores(a)[on_arm]
    return WeightVector(weights=w, arm=a, source=model.kind)
