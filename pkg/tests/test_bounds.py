import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempstab.bounds import (BoundInstance, _verify, SolverFailure, evaluate_u, figure_instance, grid_axis,
                             landscape_grid, minimize_u, mutually_exclusive, random_instance,
                             regime, same_minimizer, u_batch, verify_collapse_bound,
                             verify_convexity, verify_oracle_bound)


def loop_u(y, p, lam, norm):
    def n(v):
        return np.abs(v).sum() if norm == "l1" else np.sqrt((v * v).sum())
    tau = len(y)
    return sum(n(p[t] - y[t]) for t in range(tau)) + lam * sum(n(p[t] - p[t + 1]) for t in range(tau - 1))


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_evaluate_u_examples(norm, rng):
    inst = BoundInstance(rng.standard_normal((5, 2)), 0.7, norm)
    stab = loop_u(np.zeros((5, 2)), inst.y, 1.0, norm) - loop_u(np.zeros((5, 2)), inst.y, 0.0, norm)
    assert evaluate_u(inst, inst.y) == pytest.approx(0.7 * stab, rel=1e-13)
    coll = inst.collapse()
    assert evaluate_u(inst, coll) == pytest.approx(loop_u(inst.y, coll, 0.0, norm), rel=1e-13)
    p = rng.standard_normal((5, 2))
    assert evaluate_u(inst, p) == pytest.approx(loop_u(inst.y, p, 0.7, norm), rel=1e-13)


def test_instance_validation():
    with pytest.raises(ValueError):
        BoundInstance(np.zeros((1, 2)), 0.1)
    with pytest.raises(ValueError):
        BoundInstance(np.zeros((3, 2)), -1.0)
    with pytest.raises(ValueError):
        BoundInstance(np.zeros((3, 2)), 1.0, "linf")
    inst = BoundInstance(np.zeros((3, 1)), 1.0, first=[0.5])
    with pytest.raises(ValueError):
        evaluate_u(inst, np.zeros((3, 1)))


def test_minimize_lam_zero_is_ground_truth(rng):
    for norm in ("l1", "l2"):
        inst = BoundInstance(rng.standard_normal((4, 3)), 0.0, norm)
        res = minimize_u(inst)
        np.testing.assert_allclose(res.preds, inst.y, atol=1e-12)
        assert res.u == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_example_d2_tau4(seed):
    rng = np.random.default_rng(seed)
    inst = BoundInstance(rng.standard_normal((4, 2)), 0.4, "l2")
    res = minimize_u(inst, seed=seed)
    assert np.abs(res.preds - inst.y).max() <= 1e-4
    assert res.source == "ground_truth" and not res.failed


@pytest.mark.parametrize("seed", range(5))
def test_collapse_example_lam_tau(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 4, 2, ["l1", "l2"][seed % 2], 4.0, first_offset=0.5)
    res = minimize_u(inst, fix_first=True, seed=seed)
    assert np.abs(res.preds - inst.collapse()).max() <= 1e-4
    assert res.source == "collapse"


def test_minimize_interior_solution_against_scipy(rng):
    # between the bounds the minimizer is neither candidate; compare with a
    # derivative-free global check by Nelder-Mead from many starts
    from scipy import optimize
    inst = BoundInstance(np.array([[0.0], [2.0], [0.5], [1.5]]), 1.2, "l2")
    res = minimize_u(inst)
    best = min((optimize.minimize(lambda p: loop_u(inst.y, p.reshape(4, 1), 1.2, "l2"),
                                  rng.standard_normal(4), method="Nelder-Mead",
                                  options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
                for _ in range(10)), key=lambda r: r.fun)
    assert res.u <= best.fun + 1e-9
    assert not res.failed


def test_tightness_example_lam_08():
    # y = (0, 1, 0) with the first prediction free: smoothing beats the truth
    inst = BoundInstance(np.array([0.0, 1.0, 0.0]), 0.8, "l1")
    res = minimize_u(inst, fix_first=False)
    grid = grid_axis(-0.5, 1.5, 0.01)
    p = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"), -1).reshape(-1, 3, 1)
    u = u_batch(inst.y, p, 0.8, "l1")
    assert u.min() < evaluate_u(inst, inst.y) - 0.1
    assert res.u == pytest.approx(u.min(), abs=1e-9)
    assert not same_minimizer(inst, res.preds, inst.y)


def test_collapse_tau2_against_exhaustive_grid():
    rng = np.random.default_rng(4)
    for _ in range(5):
        y = rng.uniform(-1, 1, 2)
        first = y[0] + rng.uniform(-0.5, 0.5)
        inst = BoundInstance(y, 1.5, "l1", first=[first])
        grid = grid_axis(-2.0, 2.0, 1e-3)
        u = np.abs(first - y[0]) + np.abs(grid - y[1]) + 1.5 * np.abs(first - grid)
        g_best = grid[np.argmin(u)]
        res = minimize_u(inst, fix_first=True)
        assert abs(g_best - first) <= 1e-3
        assert abs(res.preds[1, 0] - first) <= 1e-4
        assert res.u == pytest.approx(u.min(), abs=1e-3)


def test_verify_oracle_small():
    rep = verify_oracle_bound(40, lam=0.49, seed=1)
    assert rep.pass_fraction == 1.0 and rep.passed
    assert verify_oracle_bound(20, lam=0.0, seed=2).passed
    with pytest.raises(ValueError):
        verify_oracle_bound(5, lam=0.5)


def test_verify_collapse_small():
    rep = verify_collapse_bound(30, lam=2.5, tau=3, d_range=1, seed=0)
    assert rep.passed
    rep = verify_collapse_bound(10, lam=8.0, tau=8, seed=3)
    assert rep.passed
    with pytest.raises(ValueError):
        verify_collapse_bound(5, lam=1.0, tau=3)


def test_failures_are_reported_with_instances():
    # ask for the ground truth where smoothing wins: the counterexample is kept
    inst = BoundInstance(np.array([0.0, 1.0, 0.0]), 0.8, "l1")
    rep = _verify("truth", [inst], lambda i: i.y, False, {}, 0)
    assert rep.n_pass == 0 and not rep.passed
    (fail,) = rep.failures
    assert fail["instance"] == inst.to_dict()
    assert fail["found_u"] < fail["expected_u"]


def test_solver_failure_flag(rng):
    inst = BoundInstance(rng.standard_normal((6, 3)), 1.3, "l2")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = minimize_u(inst, restarts=3, iters=3)
    # three iterations cannot converge; either the polish rescued every
    # restart or the disagreement is flagged, never silently ignored
    assert res.failed == any(issubclass(w.category, SolverFailure) for w in caught)
    assert res.failed == (res.spread > 1e-6 * max(1.0, res.u))


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_convexity(norm, rng):
    inst = BoundInstance(rng.standard_normal((5, 2)), 1.1, norm)
    rep = verify_convexity(inst, 1000, seed=0)
    assert rep.passed and rep.violations == 0
    fixed = BoundInstance(rng.standard_normal((4, 3)), 2.0, norm, first=rng.standard_normal(3))
    assert verify_convexity(fixed, 300, seed=1).passed


def test_convexity_equality_cases(rng):
    inst = BoundInstance(rng.standard_normal((4, 2)), 0.9, "l2")
    q, q2 = rng.standard_normal((2, 4, 2))
    assert evaluate_u(inst, 0.4 * q + 0.6 * q) == pytest.approx(evaluate_u(inst, q), rel=1e-14)
    for r in (0.0, 1.0):
        mid = evaluate_u(inst, r * q + (1 - r) * q2)
        assert mid == r * evaluate_u(inst, q) + (1 - r) * evaluate_u(inst, q2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-4, 4), st.sampled_from(["l1", "l2"]))
def test_u_absolutely_homogeneous(seed, c, norm):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((4, 2))
    # with zero targets u is a seminorm: u(c q) = |c| u(q)
    zero = np.zeros((4, 2))
    assert u_batch(zero, c * q, 0.6, norm) == pytest.approx(abs(c) * u_batch(zero, q, 0.6, norm),
                                                            rel=1e-12, abs=1e-12)


def test_regimes():
    for tau in range(2, 10):
        for lam in np.linspace(0, 12, 49):
            assert mutually_exclusive(lam, tau)
    assert regime(0.4, 8) == "oracle"
    assert regime(0.5, 8) == "between"
    assert regime(8.0, 8) == "collapse"


def test_landscape_argmins():
    inst = figure_instance()
    y = inst.y[:, 0]
    for lam, expect in ((0.0, (y[1], y[2])), (0.4, (y[1], y[2])), (2.5, (y[0], y[0]))):
        land = landscape_grid(inst, lam)
        assert land.argmin == pytest.approx(expect, abs=5e-4)
        assert land.p2[1] - land.p2[0] == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        landscape_grid(BoundInstance(np.zeros((4, 1)), 0.1))
