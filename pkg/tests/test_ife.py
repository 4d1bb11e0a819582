import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gapcast.ife import (AttResult, EstimationError, _loo_sq_errors, choose_r, fit_ife,
                         impute_and_att)
from gapcast.panel import PanelError
from gapcast.simgen import DgpSpec, gen_panel
from conftest import make_panel
from oracles import dummy_ols_controls, loo_by_refit, twfe_counterfactual


def test_worked_example_r0(worked_example):
    fit = fit_ife(worked_example, 0)
    att = impute_and_att(fit, worked_example)
    assert att.counterfactual[("u3", 3)] == pytest.approx(4, abs=1e-10)
    assert att.counterfactual[("u3", 4)] == pytest.approx(5, abs=1e-10)
    assert att.gaps == pytest.approx({("u3", 3): 6.0, ("u3", 4): 6.0}, abs=1e-10)
    assert att.att == pytest.approx(6.0, abs=1e-10)
    assert att.se is None and att.ci95 is None


def test_zero_gap_when_outcome_equals_counterfactual(worked_example):
    y = worked_example.outcome.copy()
    y[2, 2:] = [4.0, 5.0]
    panel = worked_example.replace(outcome=y)
    att = impute_and_att(fit_ife(panel, 0), panel)
    assert att.att == pytest.approx(0, abs=1e-12)
    assert all(abs(g) < 1e-12 for g in att.gaps.values())


def test_identity_regression():
    y = np.array([[1.0, 4.0, 2.0, 7.0]])
    panel = make_panel(y, covariates={"x": y})
    fit = fit_ife(panel, 0, ["x"])
    assert fit.beta["x"] == pytest.approx(1.0, abs=1e-12)
    assert fit.objective == pytest.approx(0, abs=1e-20)
    assert fit.sigma2 == pytest.approx(0, abs=1e-20)


def test_r0_matches_dummy_ols_with_covariate_and_holes():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(7, 9))
    x = rng.normal(size=(7, 9))
    y[1, 4] = y[3, 0] = y[5, 8] = np.nan
    panel = make_panel(y + 0.7 * np.nan_to_num(x), onset={"u6": 6, "u7": 5},
                       covariates={"x": x})
    fit = fit_ife(panel, 0, ["x"], tol=1e-14, max_iter=20000)
    att = impute_and_att(fit, panel)
    beta, _, cf = dummy_ols_controls(panel, ("x",))
    assert fit.beta["x"] == pytest.approx(beta[0], abs=1e-8)
    for key, val in att.counterfactual.items():
        assert val == pytest.approx(cf[key], abs=1e-8)


def test_noiseless_recovery():
    truth_panel, truth = gen_panel(DgpSpec(seed=4, sigma=0.0))
    fit = fit_ife(truth_panel, 2, ["TotalNumOfPaper"], tol=1e-14, max_iter=20000)
    assert fit.converged
    assert fit.objective < 1e-8
    assert fit.beta["TotalNumOfPaper"] == pytest.approx(1.0, abs=1e-6)
    att = impute_and_att(fit, truth_panel)
    assert att.att == pytest.approx(5.0, abs=1e-6)
    # fitted factors span the true factor space once time effects are absorbed
    f_true = truth.factors - truth.factors.mean(axis=0)
    proj = fit.factors @ np.linalg.pinv(fit.factors)
    assert np.linalg.norm(f_true - proj @ f_true) < 1e-6 * np.linalg.norm(f_true)


def test_normalization_and_orthogonality():
    panel, _ = gen_panel(DgpSpec(seed=11))
    fit = fit_ife(panel, 2, ["TotalNumOfPaper"], tol=1e-12, max_iter=20000)
    t = panel.n_periods
    np.testing.assert_allclose(fit.factors.T @ fit.factors / t, np.eye(2), atol=1e-10)
    ctrl = ~panel.treated_index()
    lam = fit.loadings[ctrl]
    gram = lam.T @ lam
    assert abs(gram[0, 1]) < 1e-6 * gram[0, 0]
    assert gram[0, 0] >= gram[1, 1]
    resid = panel.outcome[ctrl] - fit.predict(panel)[ctrl]
    x = panel.covariates["TotalNumOfPaper"][ctrl]
    assert abs(np.sum(resid * x)) < 1e-6 * np.sum(x * x)
    assert np.abs(resid @ fit.factors).max() < 1e-6
    assert fit.sigma2 >= 0


def test_objective_monotone():
    panel, _ = gen_panel(DgpSpec(seed=5, biannual_fraction=0.2))
    fit = fit_ife(panel, 3, ["TotalNumOfPaper"])
    path = np.array(fit.objective_path)
    assert len(path) > 2
    assert np.all(np.diff(path) <= 1e-9 * path[:-1])


def test_r_too_large():
    panel = make_panel(np.arange(12.0).reshape(3, 4), onset={"u3": 3})
    with pytest.raises(EstimationError):
        fit_ife(panel, 2)


def test_nonconvergence_flagged():
    panel, _ = gen_panel(DgpSpec(seed=2, biannual_fraction=0.3))
    fit = fit_ife(panel, 2, ["TotalNumOfPaper"], max_iter=2)
    assert not fit.converged
    assert fit.iterations == 2


def test_unknown_covariate():
    panel = make_panel(np.ones((2, 3)))
    with pytest.raises(PanelError):
        fit_ife(panel, 0, ["nope"])


def test_exactly_determined_flag():
    panel, _ = gen_panel(DgpSpec(seed=1))
    fit = fit_ife(panel.replace(treatment_onset={
        **panel.treatment_onset, panel.treated_units[0]: int(panel.periods[3])}), 2)
    assert any("exactly determined" in f for f in fit.flags)


def test_period_without_eta_rejected():
    y = np.array([[1.0, 2, np.nan, 4], [3, 4, np.nan, 6], [2, 3, 10, 11]])
    panel = make_panel(y, onset={"u3": 3})
    fit = fit_ife(panel, 0)
    with pytest.raises(EstimationError, match="u3"):
        impute_and_att(fit, panel)


def test_fit_must_match_panel(worked_example):
    fit = fit_ife(worked_example, 0)
    other = worked_example.subset(["u1", "u3"])
    with pytest.raises(EstimationError):
        impute_and_att(fit, other)


def test_att_is_weighted_mean_and_ci_pairing():
    panel, _ = gen_panel(DgpSpec(seed=8, biannual_fraction=0.2))
    att = impute_and_att(fit_ife(panel, 2, ["TotalNumOfPaper"]), panel)
    assert att.att == pytest.approx(np.mean(list(att.gaps.values())), rel=1e-12)
    with pytest.raises(ValueError):
        AttResult(gaps={}, att_by_period={}, att=0.0, se=1.0)


def test_loo_formula_matches_refit():
    rng = np.random.default_rng(0)
    z = np.column_stack([np.ones(9), rng.normal(size=(9, 2))])
    target = rng.normal(size=9)
    np.testing.assert_allclose(_loo_sq_errors(z, target), loo_by_refit(z, target), rtol=1e-10)


def test_choose_r_tie_goes_to_zero():
    panel = make_panel(np.full((6, 10), 3.0), onset={"u6": 7})
    cv = choose_r(panel, 3)
    assert cv.chosen_r == 0
    assert set(cv.mspe_by_r) == {0, 1, 2, 3}


def test_choose_r_bound_named():
    panel, _ = gen_panel(DgpSpec(seed=0))
    with pytest.raises(EstimationError, match="feasible bound"):
        choose_r(panel, 40)


def test_choose_r_thread_invariant():
    panel, _ = gen_panel(DgpSpec(seed=9))
    a = choose_r(panel, 4, ["TotalNumOfPaper"], threads=1)
    b = choose_r(panel, 4, ["TotalNumOfPaper"], threads=4)
    assert a.mspe_by_r == b.mspe_by_r and a.chosen_r == b.chosen_r
    assert a.mspe_by_r[a.chosen_r] == min(a.mspe_by_r.values())


# -- properties -------------------------------------------------------------

def _random_panel(seed, biannual):
    return gen_panel(DgpSpec(seed=seed, n_units=15, n_treated=3, n_periods=12, onset_period=9,
                             biannual_fraction=biannual))[0]


@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.2]), st.randoms(use_true_random=False))
@settings(max_examples=15, deadline=None)
def test_permutation_invariance(seed, biannual, rnd):
    panel = _random_panel(seed, biannual)
    order = list(panel.units)
    rnd.shuffle(order)
    perm = panel.subset(order)
    base = impute_and_att(fit_ife(panel, 1, ["TotalNumOfPaper"], tol=1e-13, max_iter=50000), panel)
    alt = impute_and_att(fit_ife(perm, 1, ["TotalNumOfPaper"], tol=1e-13, max_iter=50000), perm)
    assert alt.att == pytest.approx(base.att, abs=1e-6)
    for key, g in base.gaps.items():
        assert alt.gaps[key] == pytest.approx(g, abs=1e-6)


def test_period_permutation_invariance():
    # labels must increase, so reorder the columns and relabel them
    full = _random_panel(1, 0.2)
    panel = full.subset(full.control_units)
    order = np.random.default_rng(0).permutation(panel.n_periods)
    perm = panel.replace(periods=np.arange(panel.n_periods),
                         outcome=panel.outcome[:, order].copy(), mask=panel.mask[:, order].copy(),
                         covariates={k: v[:, order].copy() for k, v in panel.covariates.items()})
    p1 = fit_ife(panel, 1, ["TotalNumOfPaper"], tol=1e-14, max_iter=50000).predict(panel)
    p2 = fit_ife(perm, 1, ["TotalNumOfPaper"], tol=1e-14, max_iter=50000).predict(perm)
    np.testing.assert_allclose(p1[:, order][panel.mask[:, order]], p2[perm.mask], atol=1e-5)


@given(st.integers(0, 10_000), st.floats(0.01, 100))
@settings(max_examples=15, deadline=None)
def test_scale_equivariance(seed, c):
    panel = _random_panel(seed, 0.0)
    scaled = panel.replace(outcome=panel.outcome * c)
    a = impute_and_att(fit_ife(panel, 1, tol=1e-13, max_iter=50000), panel)
    b = impute_and_att(fit_ife(scaled, 1, tol=1e-13, max_iter=50000), scaled)
    assert b.att == pytest.approx(c * a.att, rel=1e-6, abs=1e-9 * c)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_r0_equals_closed_form(seed):
    panel = gen_panel(DgpSpec(seed=seed, n_units=8, n_treated=2, n_periods=9, onset_period=7))[0]
    att = impute_and_att(fit_ife(panel, 0), panel)
    oracle = twfe_counterfactual(panel)
    for key, val in att.counterfactual.items():
        assert abs(val - oracle[key]) < 1e-8
