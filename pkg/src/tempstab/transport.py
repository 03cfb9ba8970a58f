"""Transport distance between feature maps with mass creation and destruction.

For a signed map ``a = z1 - z2`` the distance is the cheapest way to cancel
it: moving a unit of mass from pixel i to pixel j costs their Euclidean
distance ``d_ij``, creating or destroying a unit costs ``gamma``. Positive
pixels send, negative pixels receive.

Moving farther than ``2 * gamma`` is never cheaper than destroying at the
source and creating at the sink, so edges with ``d_ij > 2 * gamma`` are
dropped before solving. The pruned problem is a transportation problem
solved by min-cost flow; the dense linear program over all pixel pairs is
kept as an oracle for testing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from ._backend import kernels

PRUNE_EPS = 1e-12


def neighbor_offsets(gamma):
    """Offsets (dy, dx) with 0 < |(dy, dx)| <= 2 gamma, one per unordered pair."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    r = int(np.floor(2 * gamma + PRUNE_EPS))
    out = []
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if (dy, dx) <= (0, 0) and dy == 0:
                continue
            d = np.hypot(dy, dx)
            if d <= 2 * gamma + PRUNE_EPS:
                out.append((dy, dx, d))
    return out


def prune_edges(shape, gamma):
    """All unordered pixel pairs within distance ``2 * gamma``.

    Returns ``(i, j, d)`` arrays of flat pixel indices (``i < j``) and their
    distances.
    """
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    ii, jj, dd = [], [], []
    for dy, dx, d in neighbor_offsets(gamma):
        y2, x2 = ys + dy, xs + dx
        ok = (y2 < h) & (x2 >= 0) & (x2 < w)
        src = (ys * w + xs)[ok]
        dst = (y2 * w + x2)[ok]
        ii.append(np.minimum(src, dst))
        jj.append(np.maximum(src, dst))
        dd.append(np.full(src.size, d))
    if not ii:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    i, j, d = np.concatenate(ii), np.concatenate(jj), np.concatenate(dd)
    order = np.lexsort((j, i))
    return i[order], j[order], d[order]


@dataclass
class TransportSolution:
    """Optimal plan: ``moved`` is (src, dst, amount) over flat pixel indices."""

    cost: float
    moved: tuple
    produced: np.ndarray
    consumed: np.ndarray
    gamma: float
    shape: tuple
    duality_gap: float
    dual_infeasibility: float
    n_edges: int
    n_augment: int

    def residual(self, a):
        """Conservation residual per pixel (should vanish)."""
        a = np.asarray(a, dtype=np.float64).ravel()
        src, dst, amt = self.moved
        r = a + self.produced - self.consumed
        np.subtract.at(r, src, amt)
        np.add.at(r, dst, amt)
        return r.reshape(self.shape)

    def flows_table(self):
        """Rows (src_y, src_x, dst_y, dst_x, amount) of moved mass."""
        src, dst, amt = self.moved
        w = self.shape[1]
        return np.stack([src // w, src % w, dst // w, dst % w, amt], axis=1) if amt.size \
            else np.zeros((0, 5))


def transport_distance(a, gamma):
    """Transport cost of a signed 2-D map and its optimal plan.

    Optimality is certified from the flow potentials: every arc has
    non-negative reduced cost (up to rounding) and the duality gap
    ``sum(reduced_cost * flow)`` is below ``1e-9`` times the problem scale;
    otherwise ``ArithmeticError`` is raised.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"transport needs a 2-D map, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("transport input contains non-finite values")
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    flat = a.ravel()
    pos = np.flatnonzero(flat > 0)
    neg = np.flatnonzero(flat < 0)
    zeros = np.zeros(flat.size)
    if pos.size == 0 and neg.size == 0:
        return 0.0, TransportSolution(0.0, (np.zeros(0, int), np.zeros(0, int), np.zeros(0)),
                                      zeros, zeros.copy(), gamma, a.shape, 0.0, 0.0, 0, 0)
    P, N = flat[pos].sum(), -flat[neg].sum()
    # node ids: positives, negatives, create node, destroy node
    npos, nneg = pos.size, neg.size
    node_of = np.full(flat.size, -1)
    node_of[pos] = np.arange(npos)
    node_of[neg] = npos + np.arange(nneg)
    vc, vd = npos + nneg, npos + nneg + 1
    supply = np.concatenate([flat[pos], flat[neg], [N, -P]])

    i, j, d = prune_edges(a.shape, gamma)
    fwd = (flat[i] > 0) & (flat[j] < 0)
    bwd = (flat[i] < 0) & (flat[j] > 0)
    m_src = np.concatenate([i[fwd], j[bwd]])
    m_dst = np.concatenate([j[fwd], i[bwd]])
    m_cost = np.concatenate([d[fwd], d[bwd]])
    tail = np.concatenate([node_of[m_src], np.arange(npos), np.full(nneg, vc), [vc]])
    head = np.concatenate([node_of[m_dst], np.full(npos, vd), npos + np.arange(nneg), [vd]])
    cost = np.concatenate([m_cost, np.full(npos + nneg, float(gamma)), [0.0]])

    scale = max(1.0, float(gamma) * (P + N))
    flow, pot, n_aug = kernels.min_cost_flow(vd + 1, supply, tail, head, cost,
                                             1e-13 * max(1.0, P + N))
    rc = cost + pot[tail] - pot[head]
    gap = float(np.abs(rc * flow).sum())
    infeas = float(max(0.0, -rc.min()))
    if gap > 1e-9 * scale or infeas > 1e-9 * max(1.0, float(gamma)):
        raise ArithmeticError(f"min-cost flow not certified optimal: gap {gap:.3g}, "
                              f"dual infeasibility {infeas:.3g}")

    nm = m_src.size
    keep = flow[:nm] > 0
    moved = (m_src[keep], m_dst[keep], flow[:nm][keep])
    consumed = zeros.copy()
    consumed[pos] = flow[nm:nm + npos]
    produced = zeros.copy()
    produced[neg] = flow[nm + npos:nm + npos + nneg]
    total = float(m_cost @ flow[:nm] + gamma * (produced.sum() + consumed.sum()))
    return total, TransportSolution(total, moved, produced, consumed, float(gamma), a.shape,
                                    gap, infeas, int(nm), int(n_aug))


def transport_metric(z1, z2, gamma):
    """Transport distance between two maps of equal shape.

    2-D inputs give one channel's distance; (C, H, W) inputs give the sum
    over channels.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch: {z1.shape} vs {z2.shape}")
    diff = z1 - z2
    if diff.ndim == 2:
        return transport_distance(diff, gamma)[0]
    if diff.ndim == 3:
        return float(sum(transport_distance(c, gamma)[0] for c in diff))
    raise ValueError(f"expected (H, W) or (C, H, W) maps, got {z1.shape}")


def dense_transport_lp(a, gamma):
    """Reference solve of the unpruned linear program over all ordered pixel
    pairs with the HiGHS solver. Returns the optimal cost."""
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    flat = a.ravel()
    ys, xs = np.divmod(np.arange(n), a.shape[1])
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    dist = np.hypot(ys[src] - ys[dst], xs[src] - xs[dst])
    nm = src.size
    # variables: m (nm), p (n), c (n); constraint per pixel:
    #   -p_i + c_i + sum_j m_ij - sum_j m_ji = a_i
    rows = np.concatenate([src, dst, np.arange(n), np.arange(n)])
    cols = np.concatenate([np.arange(nm), np.arange(nm), nm + np.arange(n), nm + n + np.arange(n)])
    vals = np.concatenate([np.ones(nm), -np.ones(nm), -np.ones(n), np.ones(n)])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, nm + 2 * n))
    c = np.concatenate([dist, np.full(2 * n, float(gamma))])
    res = optimize.linprog(c, A_eq=A, b_eq=flat, bounds=(0, None), method="highs")
    if res.status != 0:
        raise ArithmeticError(f"dense LP failed: {res.message}")
    return float(res.fun)
