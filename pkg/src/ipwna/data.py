"""Cohort data model: subjects, validation, and IPW weight vectors.

A cohort holds, per subject, the treatment indicator, baseline covariates,
the observed follow-up time and an event code (0 = censored, 1..J = event
type of the first event).  The event counting process N_j(t) = 1{T <= t,
event = j} and the at-risk process Y(t) = 1{T >= t} are derived views of
these columns; downstream estimation consumes them through weighted sums.

CSV schema (consumed by the command-line layer): a header row
``id,treatment,time,event,x1,...,xp`` with treatment in {0,1}, event in
{0..J}, decimal point, comma separator, UTF-8.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import PositivityWarning, ValidationError

__all__ = ["Subject", "Cohort", "WeightVector", "build_cohort", "make_cohort"]


@dataclass(frozen=True)
class Subject:
    """One observation: (A, X, T, event)."""

    id: object
    treatment: int
    covariates: np.ndarray
    time: float
    event: int


@dataclass(frozen=True)
class Cohort:
    """Validated sample of subjects, stored column-wise.

    Attributes
    ----------
    ids : tuple
        Opaque per-subject identifiers.
    treatment : ndarray of shape (n,)
        Binary treatment indicator A.
    covariates : ndarray of shape (n, p)
        Baseline covariates X.
    time : ndarray of shape (n,)
        Observed follow-up time T (min of event and censoring time).
    event : ndarray of shape (n,)
        Event code: 0 censored, 1..J first-event type.
    n_event_types : int
        Number of competing event types J.
    t_star : float
        Evaluation horizon; defaults to the maximum observed time.
    diagnostics : tuple of str
        Non-fatal data warnings recorded at construction.
    """

    ids: tuple
    treatment: np.ndarray
    covariates: np.ndarray
    time: np.ndarray
    event: np.ndarray
    n_event_types: int
    t_star: float
    diagnostics: tuple = field(default=())

    def __post_init__(self):
        for name in ("treatment", "covariates", "time", "event"):
            getattr(self, name).flags.writeable = False

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def arm_size(self, a: int) -> int:
        return int(np.sum(self.treatment == a))

    @property
    def subjects(self) -> list[Subject]:
        """Row view of the cohort (constructed on demand)."""
        return [
            Subject(self.ids[i], int(self.treatment[i]), self.covariates[i],
                    float(self.time[i]), int(self.event[i]))
            for i in range(self.n)
        ]


@dataclass(frozen=True)
class WeightVector:
    """IPW weights w_i = 1{A_i = a} / e(a; X_i) targeting one arm.

    Off-arm subjects carry weight exactly 0.  `max_weight` is recorded as a
    positivity diagnostic.  `source` names the propensity-model kind the
    weights came from; inference uses it to keep known-score and
    estimated-score variance paths apart.
    """

    weights: np.ndarray
    arm: int
    source: str = "unspecified"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValidationError("weights must be a 1-d array")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def max_weight(self) -> float:
        return float(self.weights.max()) if self.weights.size else 0.0


def make_cohort(treatment, time, event, covariates, n_event_types,
                ids=None, t_star=None) -> Cohort:
    """Validate column arrays and assemble a `Cohort`.

    Raises
    ------
    ValidationError
        On any malformed row; the message names the offending row index.
    """
    treatment = np.asarray(treatment)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    n = time.size
    if n == 0:
        raise ValidationError("cohort is empty")
    if covariates.shape[0] != n or treatment.size != n or event.size != n:
        raise ValidationError("column lengths differ")
    J = int(n_event_types)
    if J < 1:
        raise ValidationError("at least one event type is required")

    bad = np.flatnonzero(~np.isfinite(time))
    if bad.size:
        raise ValidationError(f"non-finite follow-up time at row {bad[0]}")
    bad = np.flatnonzero(time < 0)
    if bad.size:
        raise ValidationError(f"negative follow-up time at row {bad[0]}")
    bad = np.flatnonzero(~np.isin(treatment, (0, 1)))
    if bad.size:
        raise ValidationError(f"treatment not in {{0,1}} at row {bad[0]}")
    if not np.all(event == np.floor(event)):
        bad = np.flatnonzero(event != np.floor(event))
        raise ValidationError(f"non-integer event code at row {bad[0]}")
    bad = np.flatnonzero((event < 0) | (event > J))
    if bad.size:
        raise ValidationError(
            f"event code {event[bad[0]]:g} outside 0..{J} at row {bad[0]}")
    bad = np.flatnonzero(~np.all(np.isfinite(covariates), axis=1))
    if bad.size:
        raise ValidationError(f"missing or non-finite covariate at row {bad[0]}")

    treatment = treatment.astype(np.int8)
    event = event.astype(np.int64)
    if not np.any(treatment == 0):
        raise ValidationError("control arm empty")
    if not np.any(treatment == 1):
        raise ValidationError("treated arm empty")

    if t_star is None:
        t_star = float(time.max())
    else:
        t_star = float(t_star)
        if not np.isfinite(t_star) or t_star < 0:
            raise ValidationError("t_star must be finite and nonnegative")

    diagnostics = []
    for a in (0, 1):
        if not np.any((treatment == a) & (time >= t_star)):
            msg = (f"no subject in arm {a} is at risk at t_star={t_star:g}; "
                   "estimates near the horizon are unsupported")
            diagnostics.append(msg)
            warnings.warn(msg, PositivityWarning, stacklevel=2)

    if ids is None:
        ids = tuple(range(n))
    else:
        ids = tuple(ids)
        if len(ids) != n:
            raise ValidationError("ids length differs from the data columns")

    return Cohort(ids=ids, treatment=treatment, covariates=covariates,
                  time=time, event=event, n_event_types=J, t_star=t_star,
                  diagnostics=tuple(diagnostics))


def build_cohort(records, n_event_types, t_star=None) -> Cohort:
    """Build a validated `Cohort` from raw rows.

    Each record is a sequence ``(id, treatment, time, event, x1, ..., xp)``;
    all records must have the same length.
    """
    records = list(records)
    if not records:
        raise ValidationError("no input rows")
    width = len(records[0])
    if width < 4:
        raise ValidationError("rows need at least id, treatment, time, event")
    ids = []
    columns = np.empty((len(records), width - 1), dtype=float)
    for k, row in enumerate(records):
        if len(row) != width:
            raise ValidationError(f"inconsistent column count at row {k}")
        ids.append(row[0])
        try:
            columns[k] = [float(v) for v in row[1:]]
        except (TypeError, ValueError):
            raise ValidationError(f"non-numeric field at row {k}") from None
    return make_cohort(treatment=columns[:, 0], time=columns[:, 1],
                       event=columns[:, 2], covariates=columns[:, 3:],
                       n_event_types=n_event_types, ids=ids, t_star=t_star)
