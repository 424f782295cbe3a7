import numpy as np
import pytest

from ipwna.data import WeightVector
from ipwna.exceptions import (EstimationError, UnsupportedModelError,
                              ValidationError)
from ipwna.hazard import adjusted_nelson_aalen, cumulative_incidence
from ipwna.inference import (IFMatrix, augmentation, bootstrap_se, if_ate,
                             if_cif, if_hazard_corrected, if_hazard_naive,
                             if_hazard_oracle, martingale_residuals,
                             variance_corrected, variance_from_if,
                             variance_naive, variance_oracle_finite_sample,
                             wald_interval)
from ipwna.propensity import (fit_constant, fit_logistic, influence_vectors,
                              ipw_weights, known_propensity)

from .conftest import random_two_arm_cohort, raw_cohort


def arm_pipeline(cohort, model, arm=1):
    w = ipw_weights(model, cohort, arm)
    hazards = [adjusted_nelson_aalen(cohort, w, j)
               for j in range(1, cohort.n_event_types + 1)]
    residuals = [martingale_residuals(cohort, w, h) for h in hazards]
    return w, hazards, residuals


# ------------------------------------------------------ martingale residuals

def test_residual_increments_hand_example(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    res = martingale_residuals(three_subjects, unit_weights_3, h)
    np.testing.assert_allclose(res.increments[:, 0],
                               [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0], atol=1e-15)
    np.testing.assert_allclose(res.increments[:, 1], [0.0, 0.0, 0.0], atol=1e-15)
    assert abs(res.increments[:, 0].sum()) < 1e-15


def test_residuals_off_arm_are_zero(three_plus_control, unit_weights_3p):
    h = adjusted_nelson_aalen(three_plus_control, unit_weights_3p, 1)
    res = martingale_residuals(three_plus_control, unit_weights_3p, h)
    np.testing.assert_array_equal(res.increments[3], [0.0, 0.0])
    np.testing.assert_allclose(res.increments[:3, 0],
                               [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0], atol=1e-15)


def test_residual_columns_sum_to_zero_randomized():
    rng = np.random.default_rng(60)
    for _ in range(15):
        c = random_two_arm_cohort(rng, n=70, J=2)
        arm = int(rng.integers(0, 2))
        w = np.where(c.treatment == arm, rng.uniform(0.3, 8.0, size=c.n), 0.0)
        wv = WeightVector(weights=w, arm=arm)
        for j in (1, 2):
            h = adjusted_nelson_aalen(c, wv, j)
            res = martingale_residuals(c, wv, h)
            col_sums = res.increments.sum(axis=0)
            assert np.all(np.abs(col_sums) < 1e-12)


def test_residual_paths_step_evaluation(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    res = martingale_residuals(three_subjects, unit_weights_3, h)
    paths = res.paths([0.5, 1.0, 2.9, 3.0])
    np.testing.assert_allclose(paths[0], [0.0, 2 / 3, 2 / 3, 2 / 3], atol=1e-15)


def test_residuals_with_events_beyond_horizon():
    # jumps are filtered at t_star; later events enter no jump column
    c = raw_cohort([1, 1, 0], [1.0, 5.0, 2.0], [1, 1, 0], t_star=3.0)
    w = WeightVector(weights=np.array([1.0, 1.0, 0.0]), arm=1)
    h = adjusted_nelson_aalen(c, w, 1)
    np.testing.assert_array_equal(h.jump_times, [1.0])
    res = martingale_residuals(c, w, h)
    assert abs(res.increments.sum(axis=0)).max() < 1e-15
    c2 = raw_cohort([1, 1, 0], [4.0, 5.0, 2.0], [1, 1, 0], t_star=3.0)
    h2 = adjusted_nelson_aalen(c2, w, 1)
    assert h2.jump_times.size == 0
    res2 = martingale_residuals(c2, w, h2)
    assert res2.increments.shape == (3, 0)


def test_residuals_require_matching_weights(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    other = WeightVector(weights=np.array([2.0, 1.0, 1.0]), arm=1)
    with pytest.raises(ValidationError, match="not built from these weights"):
        martingale_residuals(three_subjects, other, h)


# ------------------------------------------------------------ hazard IFs

def test_oracle_if_hand_example(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    m = if_hazard_oracle(three_subjects, unit_weights_3, h)
    np.testing.assert_allclose(m.values[:, 0], [2 / 3, -1 / 3, -1 / 3], atol=1e-15)
    # n-scaled flavor quoted in the worked example
    np.testing.assert_allclose(3 * m.values[:, 0], [2.0, -1.0, -1.0], atol=1e-14)
    assert np.all(np.abs(m.column_means()) < 1e-12)


def test_oracle_if_rejects_estimated_weights():
    rng = np.random.default_rng(61)
    c = random_two_arm_cohort(rng, n=60, J=1)
    model = fit_logistic(c)
    w = ipw_weights(model, c, 1)
    h = adjusted_nelson_aalen(c, w, 1)
    with pytest.raises(UnsupportedModelError, match="corrected"):
        if_hazard_oracle(c, w, h)


def test_naive_variance_hand_example(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    res = martingale_residuals(three_subjects, unit_weights_3, h)
    rep = variance_naive(res, h)
    np.testing.assert_allclose(rep.se[0] ** 2, 2.0 / 27.0, atol=1e-15)
    m = if_hazard_naive(res)
    np.testing.assert_allclose(np.sum(m.values[:, 0] ** 2), 2.0 / 3.0, atol=1e-15)


def test_variance_invariant_to_zero_weight_padding(three_subjects, unit_weights_3,
                                                   three_plus_control,
                                                   unit_weights_3p):
    h3 = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    h4 = adjusted_nelson_aalen(three_plus_control, unit_weights_3p, 1)
    r3 = martingale_residuals(three_subjects, unit_weights_3, h3)
    r4 = martingale_residuals(three_plus_control, unit_weights_3p, h4)
    np.testing.assert_allclose(variance_naive(r3, h3).se,
                               variance_naive(r4, h4).se, atol=1e-15)
    v3 = variance_oracle_finite_sample(three_subjects, unit_weights_3, h3)
    v4 = variance_oracle_finite_sample(three_plus_control, unit_weights_3p, h4)
    np.testing.assert_allclose(v3.se, v4.se, atol=1e-15)


def test_oracle_finite_sample_reduces_to_classical(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    rep = variance_oracle_finite_sample(three_subjects, unit_weights_3, h)
    np.testing.assert_allclose(rep.se ** 2, [1.0 / 9.0, 10.0 / 9.0], atol=1e-15)


def test_oracle_finite_sample_classical_reduction_randomized():
    rng = np.random.default_rng(62)
    c = random_two_arm_cohort(rng, n=50, J=1)
    on = c.treatment == 1
    w = WeightVector(weights=np.where(on, 1.0, 0.0), arm=1)
    h = adjusted_nelson_aalen(c, w, 1)
    rep = variance_oracle_finite_sample(c, w, h)
    classical = np.cumsum(h.event_weight_at_jump / h.risk_weight_at_jump ** 2)
    np.testing.assert_allclose(rep.se ** 2, classical, rtol=1e-13)


def test_se_zero_before_first_event(three_subjects, unit_weights_3):
    h = adjusted_nelson_aalen(three_subjects, unit_weights_3, 1)
    res = martingale_residuals(three_subjects, unit_weights_3, h)
    rep = variance_naive(res, h, grid=[0.0, 0.5, 1.0])
    assert rep.se[0] == 0.0 and rep.se[1] == 0.0 and rep.se[2] > 0


def test_se_constant_between_jumps():
    c = raw_cohort([1, 1, 1, 1], [1.0, 2.0, 3.0, 4.0], [1, 0, 1, 0])
    w = WeightVector(weights=np.ones(4), arm=1)
    h = adjusted_nelson_aalen(c, w, 1)
    res = martingale_residuals(c, w, h)
    rep = variance_naive(res, h, grid=[1.0, 1.5, 2.9, 3.0])
    assert rep.se[0] == rep.se[1] == rep.se[2]
    assert rep.se[3] != rep.se[2]
    assert np.all(rep.se >= 0)


# -------------------------------------------------- augmentation + corrected

def test_augmentation_constant_model_is_exact_zero():
    rng = np.random.default_rng(63)
    c = random_two_arm_cohort(rng, n=80, J=2)
    model = fit_constant(c)
    for arm in (0, 1):
        w, hazards, residuals = arm_pipeline(c, model, arm)
        for h, res in zip(hazards, residuals):
            aug = augmentation(c, model, res, h)
            assert np.all(aug.b == 0.0)


def test_corrected_equals_naive_for_constant_model():
    rng = np.random.default_rng(64)
    c = random_two_arm_cohort(rng, n=80, J=2)
    model = fit_constant(c)
    phi = influence_vectors(model, c)
    w, hazards, residuals = arm_pipeline(c, model, 1)
    for h, res in zip(hazards, residuals):
        aug = augmentation(c, model, res, h)
        corrected = if_hazard_corrected(res, aug, phi)
        naive = if_hazard_naive(res)
        np.testing.assert_array_equal(corrected.values, naive.values)
        np.testing.assert_array_equal(variance_corrected(corrected).se,
                                      variance_naive(res, h).se)


def test_augmentation_rejects_known_scores():
    rng = np.random.default_rng(65)
    c = random_two_arm_cohort(rng, n=40, J=1)
    model = known_propensity(c, np.full(c.n, 0.5))
    w, hazards, residuals = arm_pipeline(c, model, 1)
    with pytest.raises(UnsupportedModelError):
        augmentation(c, model, residuals[0], hazards[0])


def test_single_subject_arm_augmentation():
    # one treated subject: off-arm residuals vanish, and the lone subject's
    # own-jump residual is exactly zero, so b is identically zero
    c = raw_cohort([1, 0, 0, 0], [2.0, 1.0, 3.0, 4.0], [1, 1, 0, 1], J=1)
    model = fit_constant(c)
    w, hazards, residuals = arm_pipeline(c, model, 1)
    aug = augmentation(c, model, residuals[0], hazards[0])
    assert aug.b.shape == (1, 1)
    np.testing.assert_array_equal(aug.b, [[0.0]])


def test_corrected_if_columns_zero_mean_logistic():
    rng = np.random.default_rng(66)
    c = random_two_arm_cohort(rng, n=120, J=2)
    model = fit_logistic(c)
    phi = influence_vectors(model, c)
    for arm in (0, 1):
        w, hazards, residuals = arm_pipeline(c, model, arm)
        for h, res in zip(hazards, residuals):
            aug = augmentation(c, model, res, h)
            m = if_hazard_corrected(res, aug, phi)
            assert np.all(np.abs(m.column_means()) < 1e-10)


# ------------------------------------------------------------------ CIF IF

def build_full_if(cohort, model, arm, kind="corrected"):
    w, hazards, residuals = arm_pipeline(cohort, model, arm)
    cif = cumulative_incidence(hazards, 1)
    grid = cif.cif.times
    mats = []
    if kind == "corrected":
        phi = influence_vectors(model, cohort)
        for h, res in zip(hazards, residuals):
            aug = augmentation(cohort, model, res, h)
            mats.append(if_hazard_corrected(res, aug, phi, grid=grid))
    else:
        for h, res in zip(hazards, residuals):
            mats.append(if_hazard_naive(res, grid=grid))
    return hazards, cif, if_cif(mats, cif)


def test_if_cif_first_jump_reduction(three_plus_control, unit_weights_3p):
    h = adjusted_nelson_aalen(three_plus_control, unit_weights_3p, 1)
    res = martingale_residuals(three_plus_control, unit_weights_3p, h)
    cif = cumulative_incidence([h], 1)
    m_h = if_hazard_naive(res, grid=cif.cif.times)
    m_f = if_cif([m_h], cif)
    np.testing.assert_allclose(m_f.values[:, 0], m_h.values[:, 0], atol=1e-15)


def test_if_cif_zero_column_means():
    rng = np.random.default_rng(67)
    c = random_two_arm_cohort(rng, n=100, J=2)
    model = fit_logistic(c)
    _, _, m = build_full_if(c, model, 1, kind="corrected")
    assert np.all(np.abs(m.column_means()) < 1e-10)
    _, _, m = build_full_if(c, model, 0, kind="naive")
    assert np.all(np.abs(m.column_means()) < 1e-10)


def test_if_cif_grid_mismatch_rejected():
    rng = np.random.default_rng(68)
    c = random_two_arm_cohort(rng, n=50, J=1)
    model = fit_constant(c)
    w, hazards, residuals = arm_pipeline(c, model, 1)
    cif = cumulative_incidence(hazards, 1)
    wrong = if_hazard_naive(residuals[0], grid=cif.cif.times[:-1])
    with pytest.raises(ValidationError, match="union jump grid"):
        if_cif([wrong], cif)


def test_delta_method_matches_finite_difference():
    # perturb all of one event type's hazard jumps by eps; the delta-method
    # linearization (run through if_cif with the perturbation as a one-row
    # "IF") must reproduce the recomputed transform to first order
    rng = np.random.default_rng(69)
    eps = 1e-6
    c = random_two_arm_cohort(rng, n=40, J=2)
    w = np.where(c.treatment == 1, rng.uniform(0.5, 3.0, size=c.n), 0.0)
    wv = WeightVector(weights=w, arm=1)
    hazards = [adjusted_nelson_aalen(c, wv, j) for j in (1, 2)]
    cif = cumulative_incidence(hazards, 1)
    grid = cif.cif.times
    for k0 in (1, 2):
        rows = []
        for h in hazards:
            if h.event == k0:
                on_grid = np.isin(grid, h.jump_times).astype(float)
                rows.append(IFMatrix(grid=grid.copy(),
                                     values=np.cumsum(on_grid)[None, :],
                                     kind="naive",
                                     estimand=f"cumhaz[event={h.event},arm=1]"))
            else:
                rows.append(IFMatrix(grid=grid.copy(),
                                     values=np.zeros((1, grid.size)),
                                     kind="naive",
                                     estimand=f"cumhaz[event={h.event},arm=1]"))
        predicted = eps * if_cif(rows, cif).values[0]

        from ipwna.hazard import HazardEstimate
        from ipwna.stepfun import StepFunction
        bumped = []
        for h in hazards:
            if h.event == k0:
                inc = h.increments + eps
                bumped.append(HazardEstimate(
                    arm=h.arm, event=h.event,
                    cum_hazard=StepFunction(h.jump_times, np.cumsum(inc)),
                    jump_times=h.jump_times.copy(),
                    risk_weight_at_jump=h.risk_weight_at_jump.copy(),
                    event_weight_at_jump=h.event_weight_at_jump.copy()))
            else:
                bumped.append(h)
        actual = cumulative_incidence(bumped, 1).cif(grid) - cif.cif(grid)
        scale = np.max(np.abs(predicted)) + eps
        assert np.max(np.abs(actual - predicted)) < 20 * eps * scale


# -------------------------------------------------------------------- ATE IF

def test_if_ate_identical_arms_zero():
    grid = np.array([1.0, 2.0])
    vals = np.array([[0.5, 0.2], [-0.5, -0.2]])
    f1 = IFMatrix(grid=grid.copy(), values=vals.copy(), kind="corrected",
                  estimand="cif[event=1,arm=1]")
    f0 = IFMatrix(grid=grid.copy(), values=vals.copy(), kind="corrected",
                  estimand="cif[event=1,arm=0]")
    m = if_ate(f1, f0)
    np.testing.assert_array_equal(m.values, np.zeros((2, 2)))
    assert m.estimand == "ate[event=1]"


def test_if_ate_grid_mismatch():
    f1 = IFMatrix(grid=np.array([1.0]), values=np.zeros((2, 1)),
                  kind="naive", estimand="cif[event=1,arm=1]")
    f0 = IFMatrix(grid=np.array([2.0]), values=np.zeros((2, 1)),
                  kind="naive", estimand="cif[event=1,arm=0]")
    with pytest.raises(ValidationError):
        if_ate(f1, f0)


def test_if_ate_full_pipeline_zero_mean():
    rng = np.random.default_rng(70)
    c = random_two_arm_cohort(rng, n=90, J=2)
    model = fit_logistic(c)
    _, cif1, m1 = build_full_if(c, model, 1)
    _, cif0, m0 = build_full_if(c, model, 0)
    grid = np.unique(np.concatenate([m1.grid, m0.grid]))
    m = if_ate(m1.at_times(grid), m0.at_times(grid))
    assert np.all(np.abs(m.column_means()) < 1e-10)


# ------------------------------------------------------------ Wald interval

def test_wald_interval_paper_row():
    z = 1.959963984540054
    se = 0.280 / (2 * z)
    lo, hi, p = wald_interval(-0.209, se, 0.95)
    assert round(lo, 3) == -0.349 and round(hi, 3) == -0.069
    assert round(p, 3) == 0.003


def test_wald_degenerate_and_null():
    lo, hi, p = wald_interval(0.3, 0.0)
    assert lo == hi == 0.3 and p == 0.0
    lo, hi, p = wald_interval(0.0, 0.0)
    assert p == 1.0
    _, _, p = wald_interval(0.0, 0.5)
    assert p == 1.0
    with pytest.raises(ValidationError):
        wald_interval(0.1, -1e-9)


def test_ci_width_identity():
    rng = np.random.default_rng(71)
    c = random_two_arm_cohort(rng, n=60, J=1)
    model = fit_logistic(c)
    _, cif1, m1 = build_full_if(c, model, 1)
    rep = variance_from_if(m1)
    z = 1.959963984540054
    t = rep.grid[-1]
    est = cif1.cif(t)
    lo, hi, _ = wald_interval(est, rep.se[-1], 0.95)
    np.testing.assert_allclose(hi - lo, 2 * z * rep.se[-1], rtol=1e-12)


# ---------------------------------------------------------------- bootstrap

def test_bootstrap_deterministic_given_seed():
    rng = np.random.default_rng(72)
    c = random_two_arm_cohort(rng, n=60, J=2)
    kw = dict(ps_kind="logistic", targets=[("cif", 1, 1), ("ate", 1)],
              grid=[1.0, 2.0, 3.0], reps=25, seed=314)
    r1 = bootstrap_se(c, **kw)
    r2 = bootstrap_se(c, **kw)
    for t in kw["targets"]:
        np.testing.assert_array_equal(r1.reports[tuple(t)].se,
                                      r2.reports[tuple(t)].se)
    assert r1.failures == r2.failures


def test_bootstrap_degenerate_rows_zero_se():
    # identical rows within each arm and a constant model: every resample
    # reproduces the same curves, so the bootstrap SD is exactly zero
    n_half = 20
    treatment = [1] * n_half + [0] * n_half
    time = [2.0] * n_half + [3.0] * n_half
    event = [1] * n_half + [2] * n_half
    c = raw_cohort(treatment, time, event, J=2)
    res = bootstrap_se(c, "constant", [("cif", 1, 1)], grid=[2.0, 3.0],
                       reps=2, seed=9)
    np.testing.assert_array_equal(res.reports[("cif", 1, 1)].se, [0.0, 0.0])


def test_bootstrap_failure_threshold():
    c = raw_cohort([1, 1, 1, 1, 0], [1.0, 2.0, 3.0, 4.0, 5.0],
                   [1, 1, 0, 1, 1], J=1)
    with pytest.raises(EstimationError, match="bootstrap resamples failed"):
        bootstrap_se(c, "constant", [("cif", 1, 1)], grid=[3.0], reps=60, seed=4)


def test_bootstrap_requires_two_reps(three_plus_control):
    with pytest.raises(ValidationError):
        bootstrap_se(three_plus_control, "constant", [("cif", 1, 1)],
                     grid=[1.0], reps=1, seed=0)
