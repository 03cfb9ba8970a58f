"""Numeric checks of when the unified loss favours the ground truth and when
it favours repeating the first prediction.

For a sequence of d-dimensional targets ``y_1..y_tau`` and predictions
``p_1..p_tau`` the loss is::

    u(p) = sum_t zeta(p_t - y_t) + lam * sum_t zeta(p_t - p_{t+1})

with ``zeta`` the L1 or L2 norm. ``u`` is convex, so a global minimizer can
be found numerically and compared with the two closed-form candidates:
the ground truth (optimal for ``lam < 1/2``) and the constant sequence
``p_t = p_1`` with ``p_1`` held fixed (optimal for ``lam > tau - 1``).
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._backend import kernels

NORM_KINDS = ("l1", "l2")
ORACLE_LIMIT = 0.5
MATCH_TOL = 1e-4
TIE_TOL = 1e-10
SPREAD_TOL = 1e-6


class SolverFailure(RuntimeWarning):
    """Restarts of a convex minimization ended at different loss values."""


@dataclass
class BoundInstance:
    """Targets ``y`` (tau, d), weight ``lam``, norm kind and an optional fixed
    first prediction ``first`` (d,)."""

    y: np.ndarray
    lam: float
    norm: str = "l2"
    first: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 2:
            raise ValueError(f"need tau >= 2 targets of shape (tau, d), got {np.shape(self.y)}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.norm not in NORM_KINDS:
            raise ValueError(f"norm must be one of {NORM_KINDS}, got {self.norm!r}")
        self.y = y
        self.lam = float(self.lam)
        if self.first is not None:
            self.first = np.asarray(self.first, dtype=np.float64).reshape(y.shape[1])

    @property
    def tau(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.y.shape[1]

    def fixed_first(self):
        return self.y[0] if self.first is None else self.first

    def collapse(self):
        """The constant sequence repeating the (fixed) first prediction."""
        return np.repeat(self.fixed_first()[None], self.tau, axis=0)

    def to_dict(self):
        return {"y": self.y.tolist(), "lam": self.lam, "norm": self.norm,
                "first": None if self.first is None else self.first.tolist()}


def _norms(v, norm):
    if norm == "l1":
        return np.abs(v).sum(-1)
    return np.sqrt((v * v).sum(-1))


def u_batch(y, preds, lam, norm):
    """Loss of every sequence in ``preds`` (..., tau, d) against ``y``."""
    acc = _norms(preds - y, norm).sum(-1)
    stab = _norms(preds[..., :-1, :] - preds[..., 1:, :], norm).sum(-1)
    return acc + lam * stab


def evaluate_u(instance, preds):
    """Exact loss of one prediction sequence.

    If the instance fixes the first prediction, ``preds[0]`` must equal it.
    """
    p = np.asarray(preds, dtype=np.float64).reshape(instance.y.shape)
    if instance.first is not None and not np.allclose(p[0], instance.first, rtol=0, atol=1e-9):
        raise ValueError("preds[0] differs from the instance's fixed first prediction")
    return float(u_batch(instance.y, p, instance.lam, instance.norm))


# -- minimization -------------------------------------------------------------

def _snap_candidates(p, y, fix_first):
    """Moves that set a block p[a..b] to one shared value: a neighbour of the
    block or a target inside it. Optimal sequences for these losses are
    piecewise constant on such values."""
    tau = p.shape[0]
    start = 1 if fix_first else 0
    out = []
    for a in range(start, tau):
        for b in range(a, tau):
            values = [y[j] for j in range(a, b + 1)]
            if a > 0:
                values.append(p[a - 1])
            if b + 1 < tau:
                values.append(p[b + 1])
            for v in values:
                q = p.copy()
                q[a:b + 1] = v
                out.append(q)
    return np.stack(out)


def polish(p, y, lam, norm, fix_first, max_rounds=200):
    """Greedy block snapping; each accepted move strictly lowers ``u``."""
    p = p.copy()
    u = float(u_batch(y, p, lam, norm))
    for _ in range(max_rounds):
        cands = _snap_candidates(p, y, fix_first)
        us = u_batch(y, cands, lam, norm)
        i = int(np.argmin(us))
        if us[i] >= u - 1e-15 * max(1.0, abs(u)):
            break
        p, u = cands[i], float(us[i])
    return p, u


@dataclass
class MinimizeResult:
    preds: np.ndarray
    u: float
    restart_u: np.ndarray
    spread: float
    failed: bool
    source: str  # "ground_truth", "collapse" or "interior"

    def to_dict(self):
        return {"preds": self.preds.tolist(), "u": self.u, "spread": self.spread,
                "failed": self.failed, "source": self.source}


def _smoothed_refine(p, y, lam, fix_first, eps_schedule=(1e-3, 1e-5, 1e-7, 1e-9, 1e-11)):
    """Continuation on ``sqrt(|v|^2 + eps^2)`` with L-BFGS, for L2 minimizers
    that sit strictly between snap points."""
    tau, d = y.shape
    first = p[0].copy()
    free = slice(1, None) if fix_first else slice(None)

    def unpack(x):
        q = p.copy()
        q[free] = x.reshape(-1, d)
        if fix_first:
            q[0] = first
        return q

    x = p[free].ravel().copy()
    for eps in eps_schedule:
        def fun(x, eps=eps):
            q = unpack(x)
            r = q - y
            nr = np.sqrt((r * r).sum(-1) + eps * eps)
            s = q[:-1] - q[1:]
            ns = np.sqrt((s * s).sum(-1) + eps * eps)
            g = r / nr[:, None]
            gs = lam * s / ns[:, None]
            g[:-1] += gs
            g[1:] -= gs
            return nr.sum() + lam * ns.sum(), g[free].ravel()
        x = optimize.minimize(fun, x, jac=True, method="L-BFGS-B",
                              options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12}).x
    return unpack(x)


def _label(p, instance, fix_first):
    gt = instance.y.copy()
    if fix_first:
        gt[0] = instance.fixed_first()
    if np.abs(p - gt).max() <= 1e-12:
        return "ground_truth"
    if np.abs(p - instance.collapse()).max() <= 1e-12:
        return "collapse"
    return "interior"


def _minimize_block(y, lam, norm, first, fix_first, restarts, iters, rng):
    tau, d = y.shape
    scale = float(np.abs(y).max() + np.abs(first).max()) + 1.0
    starts = y[None] + scale * rng.standard_normal((restarts, tau, d))
    if fix_first:
        starts[:, 0] = first
    best, _ = kernels.subgradient_descent(y, starts, lam, norm == "l2", fix_first, iters,
                                          0.5 * scale, (1e-8) ** (1.0 / iters))
    ends = [polish(b, y, lam, norm, fix_first) for b in best]
    gt = y.copy()
    if fix_first:
        gt[0] = first
    collapse = np.repeat(first[None], tau, axis=0)
    named = [polish(gt, y, lam, norm, fix_first), polish(collapse, y, lam, norm, fix_first)]
    u_star = min(u for _, u in ends + named)
    if max(u for _, u in ends) - u_star > SPREAD_TOL * max(1.0, u_star) and norm == "l2":
        refined = []
        for p, u in ends:
            q = _smoothed_refine(p, y, lam, fix_first)
            q, uq = polish(q, y, lam, norm, fix_first)
            refined.append((q, uq) if uq < u else (p, u))
        ends = refined
    restart_u = np.array([u for _, u in ends])
    p_star, u_star = min(named + ends, key=lambda c: c[1])
    # prefer a closed-form candidate when it ties the best point
    for p, u in named:
        if u <= u_star + TIE_TOL:
            p_star, u_star = p, u
            break
    return p_star, float(u_star), restart_u


def minimize_u(instance, fix_first=None, restarts=20, iters=1500, seed=0):
    """Global minimizer of ``u`` by restarted subgradient descent.

    Each of ``restarts`` random starts runs normalized subgradient descent
    with geometrically shrinking steps and is then polished by block
    snapping. The ground truth and the collapse sequence are evaluated as
    extra candidates. Since ``u`` is convex all restarts should end at the
    same value; if they spread by more than ``1e-6 * max(1, u*)`` they are
    refined by smoothed-norm continuation, and a remaining spread sets
    ``failed`` and emits a :class:`SolverFailure` warning.

    The L1 loss separates over coordinates and is solved one coordinate at
    a time.

    Parameters
    ----------
    fix_first : bool, optional
        Hold ``p_1`` at the instance's first prediction. Defaults to
        whether the instance defines one.
    """
    if fix_first is None:
        fix_first = instance.first is not None
    y, lam, norm = instance.y, instance.lam, instance.norm
    first = instance.fixed_first()
    rng = np.random.default_rng(seed)
    if norm == "l1" and instance.d > 1:
        parts = [_minimize_block(y[:, [j]], lam, "l1", first[[j]], fix_first, restarts, iters, rng)
                 for j in range(instance.d)]
        p_star = np.concatenate([p for p, _, _ in parts], axis=1)
        restart_u = np.sum([r for _, _, r in parts], axis=0)
    else:
        p_star, _, restart_u = _minimize_block(y, lam, norm, first, fix_first, restarts, iters, rng)
    u_star = float(u_batch(y, p_star, lam, norm))
    spread = float(max(0.0, restart_u.max() - u_star))
    failed = spread > SPREAD_TOL * max(1.0, abs(u_star))
    if failed:
        warnings.warn(f"restarts disagree by {spread:.3g} (u* = {u_star:.6g})", SolverFailure,
                      stacklevel=2)
    return MinimizeResult(p_star, u_star, restart_u, spread, bool(failed),
                          _label(p_star, instance, fix_first))


def same_minimizer(instance, preds, target, tol=MATCH_TOL):
    """Whether ``preds`` matches ``target`` within ``tol``, or ties it in
    loss value within 1e-10 (flat L1 valleys)."""
    preds = np.asarray(preds, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if np.abs(preds - target).max() <= tol:
        return True
    ut = float(u_batch(instance.y, target, instance.lam, instance.norm))
    up = float(u_batch(instance.y, preds, instance.lam, instance.norm))
    return abs(ut - up) <= TIE_TOL


# -- verification procedures ----------------------------------------------------------

@dataclass
class BoundReport:
    name: str
    n_instances: int
    n_pass: int
    failures: list = field(default_factory=list)
    solver_failures: int = 0
    seconds: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def pass_fraction(self):
        return self.n_pass / self.n_instances if self.n_instances else 1.0

    @property
    def passed(self):
        return self.n_pass == self.n_instances

    def to_dict(self):
        return {"name": self.name, "n_instances": self.n_instances, "n_pass": self.n_pass,
                "pass_fraction": self.pass_fraction, "solver_failures": self.solver_failures,
                "seconds": self.seconds, "params": self.params, "failures": self.failures}


def _as_range(v):
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    lo, hi = v
    return int(lo), int(hi)


def random_instance(rng, tau, d, norm, lam, first_offset=None):
    y = rng.standard_normal((tau, d))
    first = None
    if first_offset is not None:
        first = y[0] + first_offset * rng.standard_normal(d)
    return BoundInstance(y, lam, norm, first)


def mutually_exclusive(lam, tau):
    """Oracle (lam < 1/2) and collapse (lam > tau - 1) regimes cannot both hold."""
    if tau < 2:
        raise ValueError("tau must be >= 2")
    return not (lam < ORACLE_LIMIT and lam > tau - 1)


def regime(lam, tau):
    """'oracle', 'collapse' or 'between' for a weight and sequence length."""
    if lam < ORACLE_LIMIT:
        return "oracle"
    if lam > tau - 1:
        return "collapse"
    return "between"


def _verify(name, instances, target_fn, fix_first, params, seed):
    t0 = time.perf_counter()
    n_pass, failures, solver_fail = 0, [], 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SolverFailure)
        for i, inst in enumerate(instances):
            res = minimize_u(inst, fix_first=fix_first, seed=seed + i)
            solver_fail += res.failed
            target = target_fn(inst)
            if same_minimizer(inst, res.preds, target):
                n_pass += 1
            else:
                failures.append({"instance": inst.to_dict(), "found": res.preds.tolist(),
                                 "found_u": res.u, "expected": target.tolist(),
                                 "expected_u": float(u_batch(inst.y, target, inst.lam, inst.norm))})
    return BoundReport(name, len(instances), n_pass, failures, int(solver_fail),
                       time.perf_counter() - t0, params)


def verify_oracle_bound(n_instances=200, lam=0.4, tau_range=(2, 6), d_range=(1, 3),
                        norms=NORM_KINDS, seed=0):
    """Fraction of random instances whose minimizer (first prediction free)
    is the ground truth. Requires ``lam < 1/2``."""
    if not lam < ORACLE_LIMIT:
        raise ValueError(f"oracle bound needs lam < 1/2, got {lam}")
    rng = np.random.default_rng(seed)
    t_lo, t_hi = _as_range(tau_range)
    d_lo, d_hi = _as_range(d_range)
    instances = [random_instance(rng, int(rng.integers(t_lo, t_hi + 1)),
                                 int(rng.integers(d_lo, d_hi + 1)),
                                 norms[int(rng.integers(len(norms)))], lam)
                 for _ in range(n_instances)]
    params = {"lam": lam, "tau_range": [t_lo, t_hi], "d_range": [d_lo, d_hi],
              "norms": list(norms), "seed": seed}
    return _verify("oracle_bound", instances, lambda inst: inst.y, False, params, seed)


def verify_collapse_bound(n_instances=200, lam=None, tau=(2, 6), d_range=(1, 3),
                          norms=NORM_KINDS, first_offset=0.5, seed=0):
    """Fraction of random instances with a fixed first prediction whose
    minimizer repeats it. ``lam=None`` uses ``lam = tau`` per instance;
    an explicit ``lam`` must exceed ``tau - 1`` for every tau drawn."""
    rng = np.random.default_rng(seed)
    t_lo, t_hi = _as_range(tau)
    d_lo, d_hi = _as_range(d_range)
    if lam is not None and not lam > t_hi - 1:
        raise ValueError(f"collapse bound needs lam > tau - 1 = {t_hi - 1}, got {lam}")
    instances = []
    for _ in range(n_instances):
        t = int(rng.integers(t_lo, t_hi + 1))
        instances.append(random_instance(rng, t, int(rng.integers(d_lo, d_hi + 1)),
                                         norms[int(rng.integers(len(norms)))],
                                         float(t) if lam is None else lam, first_offset))
    params = {"lam": lam if lam is not None else "tau", "tau_range": [t_lo, t_hi],
              "d_range": [d_lo, d_hi], "norms": list(norms), "seed": seed}
    return _verify("collapse_bound", instances, lambda inst: inst.collapse(), True, params, seed)


@dataclass
class ConvexityReport:
    n_pairs: int
    violations: int
    max_excess: float
    tol: float

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {"n_pairs": self.n_pairs, "violations": self.violations,
                "max_excess": self.max_excess, "tol": self.tol}


def verify_convexity(instance, n_pairs=1000, seed=0, tol=1e-12):
    """Jensen test ``u(r q + (1-r) q') <= r u(q) + (1-r) u(q') + tol`` on random pairs."""
    rng = np.random.default_rng(seed)
    shape = (n_pairs,) + instance.y.shape
    q = instance.y + 2.0 * rng.standard_normal(shape)
    q2 = instance.y + 2.0 * rng.standard_normal(shape)
    if instance.first is not None:
        q[:, 0] = q2[:, 0] = instance.first
    r = rng.uniform(0.0, 1.0, n_pairs)[:, None, None]
    args = (instance.y, instance.lam, instance.norm)
    mid = u_batch(args[0], r * q + (1 - r) * q2, *args[1:])
    chord = r[:, 0, 0] * u_batch(args[0], q, *args[1:]) + (1 - r[:, 0, 0]) * u_batch(args[0], q2, *args[1:])
    # allow float rounding proportional to the magnitudes involved
    excess = mid - chord - tol * np.maximum(1.0, np.abs(chord))
    return ConvexityReport(n_pairs, int((excess > 0).sum()), float((mid - chord).max()), tol)


# -- landscape --------------------------------------------------------------------

@dataclass
class Landscape:
    p2: np.ndarray
    p3: np.ndarray
    u: np.ndarray  # u[i, j] at (p2[j], p3[i])
    argmin: tuple
    lam: float

    def to_dict(self):
        return {"lam": self.lam, "argmin": list(self.argmin),
                "p2_range": [float(self.p2[0]), float(self.p2[-1])],
                "p3_range": [float(self.p3[0]), float(self.p3[-1])],
                "resolution": float(self.p2[1] - self.p2[0])}


def grid_axis(lo, hi, res):
    n = int(round((hi - lo) / res)) + 1
    return np.round(lo + res * np.arange(n), 12)


def landscape_grid(instance, lam=None, lo=None, hi=None, res=1e-3):
    """Loss over (p2, p3) for a 1-D, tau=3 instance with p1 fixed.

    The grid spans the targets with a margin of 0.5 unless ``lo``/``hi``
    are given. Returns a :class:`Landscape` with the grid argmin.
    """
    if instance.tau != 3 or instance.d != 1:
        raise ValueError("landscape needs a 1-D instance with tau = 3")
    lam = instance.lam if lam is None else float(lam)
    y = instance.y[:, 0]
    first = float(instance.fixed_first()[0])
    lo = min(y.min(), first) - 0.5 if lo is None else lo
    hi = max(y.max(), first) + 0.5 if hi is None else hi
    p2 = grid_axis(lo, hi, res)
    p3 = grid_axis(lo, hi, res)
    a, b = p2[None, :], p3[:, None]
    f = np.abs  # in 1-D both norms are the absolute value
    u = (f(first - y[0]) + f(a - y[1]) + f(b - y[2])
         + lam * (f(first - a) + f(a - b)))
    i, j = np.unravel_index(int(np.argmin(u)), u.shape)
    return Landscape(p2, p3, u, (float(p2[j]), float(p3[i])), lam)


FIGURE_INSTANCE_Y = (0.0, 1.0, 0.5)


def figure_instance(lam=0.0):
    """The 1-D, tau=3, L1 instance used for the landscape plots; p1 = y1."""
    return BoundInstance(np.array(FIGURE_INSTANCE_Y)[:, None], lam, "l1",
                         first=np.array([FIGURE_INSTANCE_Y[0]]))
