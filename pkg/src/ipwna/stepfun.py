"""Right-continuous step functions on the nonnegative half line.

Cumulative hazards, cumulative incidence curves, treatment-effect curves and
per-subject residual paths are all represented this way: sorted jump
locations plus the cumulative value attained at each jump.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError

__all__ = ["StepFunction", "eval_step", "eval_step_left"]


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant, right-continuous function of time.

    Parameters
    ----------
    times : ndarray
        Strictly increasing, nonnegative jump locations.
    values : ndarray
        Value attained at (and after) each jump, same length as `times`.
    value_at_zero : float
        Value on ``[0, times[0])``; defaults to 0.
    """

    times: np.ndarray
    values: np.ndarray
    value_at_zero: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or values.ndim != 1 or times.shape != values.shape:
            raise ValidationError("times and values must be 1-d arrays of equal length")
        if times.size and (not np.all(np.isfinite(times)) or times[0] < 0):
            raise ValidationError("jump times must be finite and nonnegative")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValidationError("jump times must be strictly increasing")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "value_at_zero", float(self.value_at_zero))

    @property
    def n_jumps(self) -> int:
        return self.times.size

    def __call__(self, t):
        """Right-continuous evaluation: the value at the last jump <= t."""
        return eval_step(self, t)

    def left_limit(self, t):
        """Value immediately before t: the value at the last jump < t."""
        return eval_step_left(self, t)

    def increments(self) -> np.ndarray:
        """Jump sizes, one per jump time."""
        return np.diff(self.values, prepend=self.value_at_zero)


def _check_times(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("evaluation times must be nonnegative")
    return t


def _gather(f: StepFunction, idx):
    padded = np.concatenate(([f.value_at_zero], f.values))
    out = padded[idx + 1]
    return out if out.ndim else float(out)


def eval_step(f: StepFunction, t):
    """Evaluate `f` at `t` (scalar or array), right-continuously."""
    t = _check_times(t)
    return _gather(f, np.searchsorted(f.times, t, side="right") - 1)


def eval_step_left(f: StepFunction, t):
    """Evaluate the left limit of `f` at `t` (scalar or array)."""
    t = _check_times(t)
    return _gather(f, np.searchsorted(f.times, t, side="left") - 1)
