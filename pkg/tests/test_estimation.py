import warnings

import numpy as np
import pytest

from msocc import model, simulation
from msocc.estimation import (
    Conditional,
    ConvergenceError,
    FitOptions,
    FitResult,
    Marginal,
    derived_interval,
    fit,
    parse_quantity,
    wald_interval,
)
from msocc.model import OccupancyParams, SiteCounts
from msocc.simulation import SimSpec, case_study_params, simulate_history
from msocc.survey import DetectionHistory


@pytest.fixture(scope="module")
def big_history():
    spec = SimSpec(case_study_params(), 500, 12, 0.0, 2024, simulation.CASE_STUDY_SPECIES)
    return simulate_history(spec)


@pytest.fixture(scope="module")
def big_fit(big_history):
    return fit(big_history, FitOptions(seed=7))


def test_recovers_truth(big_fit):
    truth = case_study_params()
    np.testing.assert_allclose(big_fit.params_hat.p, truth.p, atol=0.05)
    for s in range(3):
        assert abs(
            model.marginal_occupancy(big_fit.params_hat, s) - model.marginal_occupancy(truth, s)
        ) < 0.05


def test_converged_fit_meets_gradient_tolerance(big_fit, big_history):
    assert big_fit.converged
    g = model.nll_gradient(big_fit.theta_hat, big_history)
    assert np.abs(g).max() < 1e-6
    np.testing.assert_array_equal(big_fit.vcov, big_fit.vcov.T)


def test_mle_beats_truth(big_fit, big_history):
    truth = case_study_params()
    assert big_fit.nll <= model.neg_log_likelihood(truth, big_history)


def test_fit_is_deterministic_and_thread_independent(big_history):
    a = fit(big_history, FitOptions(seed=3))
    b = fit(big_history, FitOptions(seed=3))
    c = fit(big_history, FitOptions(seed=3, threads=4))
    for other in (b, c):
        np.testing.assert_array_equal(a.theta_hat, other.theta_hat)
        np.testing.assert_array_equal(a.vcov, other.vcov)
        assert a.nll == other.nll
        assert a.start_nlls == other.start_nlls


def test_zero_detection_species_flags_boundary():
    rng = np.random.default_rng(5)
    y = (rng.random((2, 60, 6)) < 0.4).astype(np.int8)
    y[1] = 0
    h = DetectionHistory(["a", "b"], [f"s{i}" for i in range(60)],
                         [f"2019-{t + 1:02d}" for t in range(6)], y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit(h, FitOptions(seed=1))
    assert res.boundary_warning


def test_replicating_sites_shrinks_variance(big_history):
    counts = model.site_counts(big_history)
    doubled = SiteCounts(
        np.concatenate([counts.det, counts.det]), np.concatenate([counts.nocc, counts.nocc]), 3
    )
    a = fit(counts, FitOptions(seed=1))
    b = fit(doubled, FitOptions(seed=1))
    assert np.all(np.diag(b.vcov) <= np.diag(a.vcov) + 1e-8)


def test_species_permutation_commutes_with_fit(big_history, big_fit):
    order = [2, 0, 1]
    perm = big_history.subset_species([big_history.species[k] for k in order])
    res = fit(perm, FitOptions(seed=7))
    expected = big_fit.params_hat.permuted(order)
    np.testing.assert_allclose(res.params_hat.p, expected.p, atol=1e-6)
    np.testing.assert_allclose(res.params_hat.psi, expected.psi, atol=1e-6)


def test_no_convergence_raises_with_diagnostics(big_history):
    with pytest.raises(ConvergenceError) as info:
        fit(big_history, FitOptions(n_starts=1, grad_tol=1e-30, max_iter=2))
    assert info.value.best is not None
    assert not info.value.best.converged


def test_empty_history_rejected():
    h = DetectionHistory(["a"], ["s"], ["2020-01"], np.full((1, 1, 1), -1))
    with pytest.raises(ValueError):
        fit(h)


def _toy_result(vcov):
    theta = np.array([0.1, -0.2, 0.4, 0.5, -0.3])
    return FitResult(("a", "b"), theta, model.theta_to_params(theta, 2), 1.0, vcov, True, 1,
                     False, 0.0)


def test_wald_degenerate_variance():
    res = _toy_result(np.zeros((5, 5)))
    iv = wald_interval(res, 3)
    assert iv.lower == iv.point == iv.upper


def test_wald_uses_normal_quantile():
    vcov = np.eye(5)
    res = _toy_result(vcov)
    iv = wald_interval(res, 0, 0.95)
    assert iv.upper - iv.point == pytest.approx(1.959964, abs=1e-6)
    p_iv = wald_interval(res, 4)
    assert 0 < p_iv.lower < p_iv.point < p_iv.upper < 1


def test_intervals_need_vcov():
    res = _toy_result(None)
    with pytest.raises(ValueError):
        wald_interval(res, 0)
    with pytest.raises(ValueError):
        derived_interval(res, Marginal(0))


def test_derived_point_consistency(big_fit):
    for s in range(3):
        iv = derived_interval(big_fit, Marginal(s))
        assert iv.point == model.marginal_occupancy(big_fit.params_hat, s)
        assert 0 <= iv.lower <= iv.point <= iv.upper <= 1


def test_independent_psi_conditional_equals_marginal():
    a, b = 0.35, 0.7
    psi = np.array([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b])
    theta = model.params_to_theta(OccupancyParams(psi, [0.4, 0.6]))
    res = FitResult(("x", "y"), theta, model.theta_to_params(theta, 2), 1.0, np.eye(5) * 0.01,
                    True, 1, False, 0.0)
    cond = derived_interval(res, Conditional(1, (0,), (True,)))
    marg = derived_interval(res, Marginal(1))
    assert cond.point == pytest.approx(marg.point, abs=1e-12)


def test_parse_quantity():
    names = ["lynx", "roe_deer", "chamois"]
    assert parse_quantity("marginal(chamois)", names) == Marginal(2)
    q = parse_quantity("conditional(lynx|roe_deer=1,chamois=0)", names)
    assert q == Conditional(0, (1, 2), (True, False))
    assert q.label(names) == "conditional(lynx|roe_deer=1,chamois=0)"
    with pytest.raises(ValueError):
        parse_quantity("mean(lynx)", names)
    with pytest.raises(KeyError):
        parse_quantity("marginal(wolf)", names)


@pytest.mark.slow
def test_delta_method_matches_bootstrap(big_history, big_fit):
    counts = model.site_counts(big_history)
    quantities = [Marginal(0), Marginal(1), Conditional(0, (1,), (True,))]
    boot = simulation.bootstrap(big_fit, counts, quantities, 200, seed=11,
                                opts=FitOptions(n_starts=1, threads=4))
    boot_se = np.nanstd(boot, axis=0, ddof=1)
    delta_se = np.array([derived_interval(big_fit, q).se for q in quantities])
    np.testing.assert_allclose(delta_se, boot_se, rtol=0.25)
