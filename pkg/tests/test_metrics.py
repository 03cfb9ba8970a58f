import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tempstab.autodiff import Tensor, backward, gradient_check, reset_tape
from tempstab.bounds import figure_instance, landscape_grid
from tempstab.metrics import (L2_MEAN, L2_SUM, Metric, corruption_instability,
                              corruption_robustness_error, instability, psnr, unified_loss)

L1_SUM = Metric("l1", "sum")
METRICS = [Metric(k, r) for k in ("l1", "l2") for r in ("sum", "mean")]


def loop_distance(a, b, kind):
    d = np.asarray(a, float).ravel() - np.asarray(b, float).ravel()
    if kind == "l1":
        return sum(abs(v) for v in d)
    return math.sqrt(sum(v * v for v in d))


def loop_reduce(vals, reduction):
    if not vals:
        return 0.0
    return sum(vals) / (len(vals) if reduction == "mean" else 1)


def test_instability_examples():
    assert instability([np.ones(3)] * 4) == 0.0
    assert instability([np.array([0.0]), np.array([1.0]), np.array([3.0])], L1_SUM) == 3.0
    assert instability([np.ones(2)]) == 0.0


@pytest.mark.parametrize("metric", METRICS, ids=str)
def test_instability_and_robustness_match_loops(metric, rng):
    preds = list(rng.standard_normal((6, 2, 3, 3)))
    targets = list(rng.standard_normal((6, 2, 3, 3)))
    inst = loop_reduce([loop_distance(preds[t], preds[t + 1], metric.kind) for t in range(5)],
                       metric.reduction)
    rob = loop_reduce([loop_distance(p, y, metric.kind) for p, y in zip(preds, targets)],
                      metric.reduction)
    assert instability(preds, metric) == pytest.approx(inst, rel=1e-12)
    assert corruption_instability(preds, metric) == pytest.approx(inst, rel=1e-12)
    assert corruption_robustness_error(preds, targets, metric) == pytest.approx(rob, rel=1e-12)


def test_robustness_examples():
    assert corruption_robustness_error([np.ones(2)] * 3, [np.ones(2)] * 3) == 0.0
    assert corruption_robustness_error([np.array([1.0]), np.array([2.0])],
                                       [np.zeros(1), np.zeros(1)], L1_SUM) == 3.0
    with pytest.raises(ValueError):
        corruption_robustness_error([np.ones(2)], [np.ones(2)] * 2)


def test_corruption_instability_single_frame():
    assert corruption_instability([np.ones((1, 4, 4))]) == 0.0


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="frame 1"):
        instability([np.zeros(3), np.zeros(4)])


@pytest.mark.parametrize("kind", ["l1", "l2"])
def test_metric_axioms(kind):
    d = Metric(kind)
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b, c = rng.standard_normal((3, 5))
        assert d(a, a) == 0.0
        assert d(a, b) > 0
        assert d(a, b) == d(b, a)
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_unified_loss_decomposition(rng):
    preds = list(rng.standard_normal((4, 3)))
    targets = list(rng.standard_normal((4, 3)))
    rep0 = unified_loss(preds, targets, 0.0)
    assert rep0.total == rep0.accuracy_term
    rep = unified_loss(preds, targets, 0.7)
    assert rep.total == pytest.approx(rep.accuracy_term + 0.7 * rep.stability_term, rel=1e-15)
    assert rep.stability_term == pytest.approx(instability(preds, L2_SUM))
    with pytest.raises(ValueError):
        unified_loss(preds, targets, -0.1)


def test_unified_loss_permutation_behaviour():
    preds = [np.array([0.0]), np.array([1.0]), np.array([2.0])]
    targets = [np.array([0.5]), np.array([1.0]), np.array([0.0])]
    perm = [2, 0, 1]
    a = unified_loss(preds, targets, 1.0, L1_SUM)
    b = unified_loss([preds[i] for i in perm], [targets[i] for i in perm], 1.0, L1_SUM)
    assert a.accuracy_term == b.accuracy_term
    assert a.stability_term != b.stability_term


def test_unified_loss_is_differentiable(rng):
    targets = [Tensor(t) for t in rng.standard_normal((5, 2, 3, 3))]

    def f(x):
        preds = [x * float(c) for c in (1.0, 0.9, 1.1, 0.8, 1.2)]
        return unified_loss(preds, targets, 0.3).loss
    assert gradient_check(f, rng.standard_normal((2, 3, 3))) < 1e-4
    reset_tape()
    x = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
    rep = unified_loss([x, x * 2.0], targets[:2], 0.3)
    backward(rep.loss)
    assert rep.total == pytest.approx(rep.loss.item())
    assert x.grad is not None


def test_unified_loss_landscape_examples():
    # fixed first prediction, tau = 3, L1: the grid minimum moves from the
    # targets to the collapse state once lam exceeds tau - 1
    inst = figure_instance()
    y = inst.y[:, 0]
    for lam, expect in ((0.0, (y[1], y[2])), (0.4, (y[1], y[2])), (2.5, (y[0], y[0]))):
        land = landscape_grid(inst, lam, res=1e-2)
        assert land.argmin == pytest.approx(expect, abs=1e-9)
        # the grid value agrees with unified_loss at that point
        i, j = np.unravel_index(np.argmin(land.u), land.u.shape)
        preds = [np.array([y[0]]), np.array([land.p2[j]]), np.array([land.p3[i]])]
        rep = unified_loss(preds, [np.array([v]) for v in y], lam, L1_SUM)
        assert rep.total == pytest.approx(land.u[i, j], abs=1e-12)


def test_psnr():
    a = np.random.default_rng(0).random((1, 8, 8))
    assert psnr(a, a) == math.inf
    b = np.zeros((1, 10, 10))
    assert psnr(b + 0.1, b) == pytest.approx(20.0, abs=1e-9)
    c = np.random.default_rng(1).random((1, 8, 8))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), c.ravel())) / a.size
    assert psnr(a, c) == pytest.approx(10 * math.log10(1 / mse), rel=1e-12)
    assert psnr(a * 2, c * 2, peak=2.0) == pytest.approx(psnr(a, c), rel=1e-12)
    with pytest.raises(ValueError):
        psnr(a, b)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)), st.floats(-5, 5))
def test_instability_translation_invariant(frames, shift):
    preds = list(frames)
    base = instability(preds, L2_MEAN)
    moved = instability([p + shift for p in preds], L2_MEAN)
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("kind,reduction", [("linf", "sum"), ("l2", "max")])
def test_metric_rejects_unknown(kind, reduction):
    with pytest.raises(ValueError):
        Metric(kind, reduction)
