"""Stability, robustness, unified loss and PSNR over prediction sequences.

All quantities are returned as positive errors: ``instability`` is the
negated stability, ``corruption_robustness_error`` the negated robustness.
Functions accept numpy arrays or autodiff Tensors; with Tensors on the tape,
:func:`unified_loss` stays differentiable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops

NORMS = ("l2", "l1")
REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class Metric:
    """delta(a, b) = norm(a - b), reduced over frame pairs by sum or mean."""

    kind: str = "l2"
    reduction: str = "mean"

    def __post_init__(self):
        if self.kind not in NORMS:
            raise ValueError(f"metric kind must be one of {NORMS}, got {self.kind!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")

    def __call__(self, a, b):
        if isinstance(a, Tensor) or isinstance(b, Tensor):
            d = ops.sub(a, b)
            return ops.l2_norm(d) if self.kind == "l2" else ops.l1_norm(d)
        d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        if self.kind == "l2":
            return float(np.sqrt((d * d).sum()))
        return float(np.abs(d).sum())

    def reduce(self, values):
        """Sum or mean of per-pair distances (floats or scalar Tensors)."""
        if not values:
            return 0.0
        total = values[0]
        for v in values[1:]:
            total = total + v
        if self.reduction == "mean":
            total = total * (1.0 / len(values))
        return total


L2_SUM = Metric("l2", "sum")
L2_MEAN = Metric("l2", "mean")


def _shape(x):
    return x.shape if isinstance(x, Tensor) else np.shape(x)


def _check_frames(preds):
    if len(preds) < 1:
        raise ValueError("need at least one prediction")
    s0 = _shape(preds[0])
    for t, p in enumerate(preds):
        if _shape(p) != s0:
            raise ValueError(f"frame {t} has shape {_shape(p)}, frame 0 has {s0}")


def _as_value(x):
    return x.item() if isinstance(x, Tensor) else float(x)


def instability(preds, metric=L2_MEAN):
    """Reduced delta between consecutive predictions; 0 for a single frame."""
    _check_frames(preds)
    pairs = [metric(preds[t], preds[t + 1]) for t in range(len(preds) - 1)]
    return _as_value(metric.reduce(pairs)) if pairs else 0.0


def corruption_instability(preds_under_corruption, metric=L2_MEAN):
    """Instability of predictions made on corrupted inputs."""
    return instability(preds_under_corruption, metric)


def corruption_robustness_error(preds, targets, metric=L2_MEAN):
    """Reduced delta between each prediction and its target."""
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} predictions but {len(targets)} targets")
    _check_frames(preds)
    return _as_value(metric.reduce([metric(p, y) for p, y in zip(preds, targets)]))


@dataclass
class UnifiedLossReport:
    accuracy_term: float
    stability_term: float
    lam: float
    total: float
    loss: Tensor | None = None  # differentiable total, when inputs were on the tape

    def as_dict(self):
        return {"accuracy_term": self.accuracy_term, "stability_term": self.stability_term,
                "lam": self.lam, "total": self.total}


def unified_loss(preds, targets, lam, metric=L2_SUM):
    """Accuracy term plus ``lam`` times the stability term.

    With the default sum reduction this is the per-sequence loss
    ``sum_t delta(pred_t, y_t) + lam * sum_t delta(pred_t, pred_{t+1})``.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} predictions but {len(targets)} targets")
    _check_frames(preds)
    acc = metric.reduce([metric(p, y) for p, y in zip(preds, targets)])
    stab = metric.reduce([metric(preds[t], preds[t + 1]) for t in range(len(preds) - 1)])
    differentiable = isinstance(acc, Tensor)
    if differentiable:
        total = acc + stab * lam if isinstance(stab, Tensor) else acc + lam * stab
        return UnifiedLossReport(acc.item(), _as_value(stab), float(lam), total.item(), total)
    acc_v, stab_v = float(acc), float(stab)
    return UnifiedLossReport(acc_v, stab_v, float(lam), acc_v + lam * stab_v)


def psnr(pred, target, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    pred = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"psnr: shapes {pred.shape} and {target.shape} differ")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def mean_psnr(preds, targets, peak=1.0):
    return float(np.mean([psnr(p, y, peak) for p, y in zip(preds, targets)]))
