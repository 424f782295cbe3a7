"""Point estimation of counterfactual hazards and cumulative incidences.

The cumulative cause-specific hazard for target arm `a` is estimated by
weighting both the event counting process and the at-risk process with IPW
weights:

    dLambda_j(s) = sum_i w_i dN_ij(s) / sum_i w_i Y_i(s),

a step function with one jump per distinct event time (tied events
aggregate their weighted counts).  The cumulative incidence transform

    F_j(t) = sum_{s <= t} exp(-sum_k Lambda_k(s-)) dLambda_j(s)

uses the left limit of the cumulative hazards in the survival factor, so
the first jump contributes exactly its hazard increment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Cohort, WeightVector
from .exceptions import EstimationError, ValidationError
from .stepfun import StepFunction

__all__ = ["HazardEstimate", "CIFEstimate", "adjusted_nelson_aalen",
           "cumulative_incidence", "ate"]


@dataclass(frozen=True)
class HazardEstimate:
    """Weighted Nelson-Aalen estimate of one arm's cause-j cumulative hazard."""

    arm: int
    event: int
    cum_hazard: StepFunction
    jump_times: np.ndarray
    risk_weight_at_jump: np.ndarray
    event_weight_at_jump: np.ndarray

    def __post_init__(self):
        for name in ("jump_times", "risk_weight_at_jump", "event_weight_at_jump"):
            getattr(self, name).flags.writeable = False

    @property
    def increments(self) -> np.ndarray:
        return self.cum_hazard.increments()


@dataclass(frozen=True)
class CIFEstimate:
    """Cumulative incidence of event `event` in arm `arm`, with overall survival.

    Both step functions live on the union of all event types' jump times.
    `exceeds_unit_range` flags pathological small-risk-set fits where the raw
    incidence exceeds 1; values are never clipped.
    """

    arm: int
    event: int
    cif: StepFunction
    survival: StepFunction
    exceeds_unit_range: bool = False


def risk_weight_at(time, weights, at_times) -> np.ndarray:
    """Total weight of subjects still at risk (T >= s) at each time in `at_times`."""
    order = np.argsort(time, kind="stable")
    sorted_time = time[order]
    suffix = np.concatenate([np.cumsum(weights[order][::-1])[::-1], [0.0]])
    idx = np.searchsorted(sorted_time, at_times, side="left")
    return suffix[idx]


def adjusted_nelson_aalen(cohort: Cohort, weights: WeightVector, event: int) -> HazardEstimate:
    """IPW-weighted Nelson-Aalen estimate for one event type and one arm.

    Jumps sit at the distinct times where a weight-positive subject has the
    target event; each jump equals the weighted event count over the weighted
    risk set at that time.
    """
    if not 1 <= event <= cohort.n_event_types:
        raise ValidationError(f"event must be in 1..{cohort.n_event_types}")
    w = weights.weights
    if w.shape != cohort.time.shape:
        raise ValidationError("weight vector does not match the cohort")
    is_jump = (w > 0) & (cohort.event == event) & (cohort.time <= cohort.t_star)
    jump_times, inverse = np.unique(cohort.time[is_jump], return_inverse=True)
    event_weight = np.zeros(jump_times.size)
    np.add.at(event_weight, inverse, w[is_jump])
    risk_weight = risk_weight_at(cohort.time, w, jump_times)
    if np.any(risk_weight <= 0.0):
        t_bad = jump_times[np.flatnonzero(risk_weight <= 0.0)[0]]
        raise EstimationError(f"risk set exhausted at event time {t_bad:g}")
    increments = event_weight / risk_weight
    cum_hazard = StepFunction(jump_times, np.cumsum(increments))
    return HazardEstimate(arm=weights.arm, event=event, cum_hazard=cum_hazard,
                          jump_times=jump_times, risk_weight_at_jump=risk_weight,
                          event_weight_at_jump=event_weight)


def union_grid(hazards) -> np.ndarray:
    """Merged, sorted, distinct jump times of several hazard estimates."""
    return np.unique(np.concatenate([h.jump_times for h in hazards]))


def _check_hazard_set(hazards):
    arms = {h.arm for h in hazards}
    if len(arms) != 1:
        raise ValidationError("hazard estimates come from different arms")
    events = sorted(h.event for h in hazards)
    if events != list(range(1, len(hazards) + 1)):
        raise ValidationError("need exactly one hazard estimate per event type 1..J")


def cumulative_incidence(hazards, event: int) -> CIFEstimate:
    """Transform all J cause-specific hazards into the incidence of one event.

    Parameters
    ----------
    hazards : sequence of HazardEstimate
        One estimate per event type 1..J, all for the same arm.
    event : int
        The event type whose incidence is returned.
    """
    hazards = list(hazards)
    _check_hazard_set(hazards)
    target = next(h for h in hazards if h.event == event)
    grid = union_grid(hazards)
    total = np.zeros(grid.size)
    for h in hazards:
        total += h.cum_hazard(grid)
    survival_values = np.exp(-total)
    # survival factor uses the left limit: exp(-sum_k Lambda_k(s-))
    survival_before = np.concatenate([[1.0], survival_values[:-1]])
    d_target = np.diff(target.cum_hazard(grid), prepend=0.0)
    cif_values = np.cumsum(survival_before * d_target)
    return CIFEstimate(
        arm=target.arm, event=event,
        cif=StepFunction(grid, cif_values),
        survival=StepFunction(grid, survival_values, value_at_zero=1.0),
        exceeds_unit_range=bool(cif_values.size and cif_values[-1] > 1.0))


def ate(f1: CIFEstimate, f0: CIFEstimate) -> StepFunction:
    """Difference of counterfactual incidences F_j^1 - F_j^0 on the union grid.

    Negative values mean treatment lowers the incidence of the event.
    """
    if f1.event != f0.event:
        raise ValidationError("cumulative incidences target different events")
    if f1.arm != 1 or f0.arm != 0:
        raise ValidationError("expected arm-1 and arm-0 incidences, in that order")
    grid = np.unique(np.concatenate([f1.cif.times, f0.cif.times]))
    return StepFunction(grid, f1.cif(grid) - f0.cif(grid))
