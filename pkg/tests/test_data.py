import numpy as np
import pytest

from ipwna.data import WeightVector, build_cohort, make_cohort
from ipwna.exceptions import PositivityWarning, ValidationError


def rows3():
    return [(1, 1, 1.0, 1, 0.3), (2, 0, 2.0, 0, -0.5), (3, 1, 3.0, 1, 1.2)]


def test_build_cohort_basic():
    c = build_cohort(rows3(), n_event_types=2)
    assert c.n == 3 and c.n_event_types == 2 and c.p == 1
    assert c.t_star == 3.0
    np.testing.assert_array_equal(c.event, [1, 0, 1])
    assert [s.id for s in c.subjects] == [1, 2, 3]


def test_negative_time_names_row():
    rows = rows3()
    rows[1] = (2, 0, -1.0, 0, -0.5)
    with pytest.raises(ValidationError, match="negative follow-up time at row 1"):
        build_cohort(rows, n_event_types=2)


def test_single_arm_rejected():
    rows = [(1, 1, 1.0, 1, 0.0), (2, 1, 2.0, 0, 0.0)]
    with pytest.raises(ValidationError, match="control arm empty"):
        build_cohort(rows, n_event_types=1)
    rows = [(1, 0, 1.0, 1, 0.0), (2, 0, 2.0, 0, 0.0)]
    with pytest.raises(ValidationError, match="treated arm empty"):
        build_cohort(rows, n_event_types=1)


def test_event_code_out_of_range():
    rows = rows3()
    rows[0] = (1, 1, 1.0, 3, 0.3)
    with pytest.raises(ValidationError, match="event code 3 outside 0..2 at row 0"):
        build_cohort(rows, n_event_types=2)


def test_nan_covariate_named():
    rows = rows3()
    rows[2] = (3, 1, 3.0, 1, float("nan"))
    with pytest.raises(ValidationError, match="covariate at row 2"):
        build_cohort(rows, n_event_types=2)


def test_inconsistent_columns():
    rows = [rows3()[0], (2, 0, 2.0, 0)]
    with pytest.raises(ValidationError, match="inconsistent column count at row 1"):
        build_cohort(rows, n_event_types=2)


def test_non_numeric_field():
    rows = [rows3()[0], (2, 0, "oops", 0, 0.1)]
    with pytest.raises(ValidationError, match="non-numeric field at row 1"):
        build_cohort(rows, n_event_types=2)


def test_empty_input():
    with pytest.raises(ValidationError, match="no input rows"):
        build_cohort([], n_event_types=1)


def test_determinism():
    a = build_cohort(rows3(), n_event_types=2)
    b = build_cohort(rows3(), n_event_types=2)
    np.testing.assert_array_equal(a.time, b.time)
    np.testing.assert_array_equal(a.covariates, b.covariates)
    assert a.t_star == b.t_star and a.ids == b.ids


def test_t_star_override_and_at_risk_warning():
    with pytest.warns(PositivityWarning):
        c = build_cohort(rows3(), n_event_types=2, t_star=2.5)
    assert c.t_star == 2.5 and len(c.diagnostics) == 1


def test_immutability():
    c = build_cohort(rows3(), n_event_types=2)
    with pytest.raises(ValueError):
        c.time[0] = 9.0


def test_weight_vector_validation():
    with pytest.raises(ValidationError):
        WeightVector(weights=np.array([1.0, -0.5]), arm=1)
    with pytest.raises(ValidationError):
        WeightVector(weights=np.array([1.0, np.inf]), arm=1)
    w = WeightVector(weights=np.array([2.0, 0.0]), arm=1)
    assert w.max_weight == 2.0


def test_make_cohort_zero_covariates_allowed():
    c = make_cohort(treatment=[1, 0], time=[1.0, 2.0], event=[1, 0],
                    covariates=np.zeros((2, 0)), n_event_types=1)
    assert c.p == 0
