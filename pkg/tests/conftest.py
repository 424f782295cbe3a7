import numpy as np
import pytest

from ipwna.data import Cohort, WeightVector


def raw_cohort(treatment, time, event, covariates=None, J=1, t_star=None):
    """Direct Cohort construction, bypassing build-time validation.

    Needed for the single-arm worked examples; everything else should go
    through build_cohort / make_cohort.
    """
    treatment = np.asarray(treatment, dtype=np.int8)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=np.int64)
    n = time.size
    if covariates is None:
        covariates = np.zeros((n, 0))
    covariates = np.asarray(covariates, dtype=float).reshape(n, -1)
    return Cohort(ids=tuple(range(n)), treatment=treatment, covariates=covariates,
                  time=time, event=event, n_event_types=J,
                  t_star=float(time.max()) if t_star is None else float(t_star))


@pytest.fixture
def three_subjects():
    """The hand-worked cohort: times (1,2,3), events (1,0,1), all treated."""
    return raw_cohort(treatment=[1, 1, 1], time=[1.0, 2.0, 3.0], event=[1, 0, 1])


@pytest.fixture
def three_plus_control():
    """Same three subjects plus one weight-zero control, so arms are valid."""
    return raw_cohort(treatment=[1, 1, 1, 0], time=[1.0, 2.0, 3.0, 2.5],
                      event=[1, 0, 1, 0])


@pytest.fixture
def unit_weights_3():
    return WeightVector(weights=np.array([1.0, 1.0, 1.0]), arm=1)


@pytest.fixture
def unit_weights_3p():
    return WeightVector(weights=np.array([1.0, 1.0, 1.0, 0.0]), arm=1)


def random_two_arm_cohort(rng, n=50, J=2):
    """Small random cohort with ties, both arms, for property tests."""
    treatment = rng.integers(0, 2, size=n)
    if treatment.sum() == 0:
        treatment[0] = 1
    if treatment.sum() == n:
        treatment[0] = 0
    time = np.round(rng.exponential(2.0, size=n), 1) + 0.1
    event = rng.integers(0, J + 1, size=n)
    covariates = rng.normal(size=(n, 2))
    return raw_cohort(treatment, time, event, covariates, J=J)
