"""Pure-Python / numpy implementations of the numerical kernels.

These are the fallback when the compiled ``_ckernels`` extension is not
available, and the reference the compiled versions are tested against.
Every function here has a twin with the same name and signature in
``_ckernels.pyx``.
"""
import heapq
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


# -- 2-D convolution, "same" padding, odd square kernels -------------------

def _im2col(x, k):
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # C, H, W, k, k
    c, h, w = x.shape
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, h * w)


def conv2d_forward(x, w, b):
    cout, cin, k, _ = w.shape
    _, h, wd = x.shape
    cols = _im2col(x, k)
    out = w.reshape(cout, -1) @ cols
    out += b[:, None]
    return out.reshape(cout, h, wd)


def conv2d_backward(x, w, gout):
    cout, cin, k, _ = w.shape
    _, h, wd = x.shape
    r = k // 2
    g2 = gout.reshape(cout, h * wd)
    cols = _im2col(x, k)
    gw = (g2 @ cols.T).reshape(w.shape)
    gb = g2.sum(axis=1)
    gcols = (w.reshape(cout, -1).T @ g2).reshape(cin, k, k, h, wd)
    gxp = np.zeros((cin, h + 2 * r, wd + 2 * r))
    for ky in range(k):
        for kx in range(k):
            gxp[:, ky:ky + h, kx:kx + wd] += gcols[:, ky, kx]
    return gxp[:, r:r + h, r:r + wd].copy(), gw, gb


# -- neighborhood blend (spatial fusion) ------------------------------------

def _tap_slices(dy, dx, h, w):
    """Slices (dst, src) so that dst[y, x] pairs with src[y + dy, x + dx]."""
    ys_d = slice(max(0, -dy), min(h, h - dy))
    xs_d = slice(max(0, -dx), min(w, w - dx))
    ys_s = slice(max(0, dy), min(h, h + dy))
    xs_s = slice(max(0, dx), min(w, w + dx))
    return (ys_d, xs_d), (ys_s, xs_s)


def blend_forward(wts, z, prev, k):
    g, m1, h, w = wts.shape
    r = k // 2
    out = wts[:, m1 - 1] * z
    l = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            (yd, xd), (ys, xs) = _tap_slices(dy, dx, h, w)
            out[:, yd, xd] += wts[:, l, yd, xd] * prev[:, ys, xs]
            l += 1
    return out


def blend_backward(wts, z, prev, k, gout):
    g, m1, h, w = wts.shape
    r = k // 2
    gw = np.zeros_like(wts)
    gprev = np.zeros_like(prev)
    gw[:, m1 - 1] = gout * z
    gz = gout * wts[:, m1 - 1]
    l = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            (yd, xd), (ys, xs) = _tap_slices(dy, dx, h, w)
            gw[:, l, yd, xd] = gout[:, yd, xd] * prev[:, ys, xs]
            gprev[:, ys, xs] += gout[:, yd, xd] * wts[:, l, yd, xd]
            l += 1
    return gw, gz, gprev


# -- subgradient descent on the unified loss u ------------------------------

def _u_batch(x, y, lam, l2):
    acc = x - y
    stab = x[:, :-1] - x[:, 1:]
    if l2:
        return np.sqrt((acc ** 2).sum(-1)).sum(-1) + lam * np.sqrt((stab ** 2).sum(-1)).sum(-1)
    return np.abs(acc).sum((-1, -2)) + lam * np.abs(stab).sum((-1, -2))


def _unit(v, l2):
    if not l2:
        return np.sign(v)
    n = np.sqrt((v ** 2).sum(-1, keepdims=True))
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def subgradient_descent(y, starts, lam, l2, fix_first, iters, step0, decay):
    """Normalized subgradient descent from every start; returns best iterates.

    ``starts`` has shape (R, tau, d). Steps shrink geometrically by
    ``decay``. The zero subgradient is used at kinks.
    """
    x = np.array(starts, dtype=np.float64, copy=True)
    y = np.asarray(y, dtype=np.float64)
    best = x.copy()
    best_u = _u_batch(x, y, lam, l2)
    step = step0
    for _ in range(iters):
        g = _unit(x - y, l2)
        s = lam * _unit(x[:, :-1] - x[:, 1:], l2)
        g[:, :-1] += s
        g[:, 1:] -= s
        if fix_first:
            g[:, 0] = 0.0
        gn = np.sqrt((g ** 2).sum((-1, -2)))
        gn[gn == 0] = 1.0
        x -= (step / gn)[:, None, None] * g
        u = _u_batch(x, y, lam, l2)
        better = u < best_u
        best[better] = x[better]
        best_u[better] = u[better]
        step *= decay
    return best, best_u


# -- min-cost flow by successive shortest paths -----------------------------

def min_cost_flow(n, supply, tail, head, cost, tol):
    """Min-cost flow on an uncapacitated network with real-valued supplies.

    Successive shortest paths with Dijkstra on reduced costs. Returns
    ``(flow, potential, n_augment)``. Nodes with |remaining supply| <= tol
    are treated as balanced.
    """
    supply = [float(s) for s in supply]
    tail = [int(t) for t in tail]
    head = [int(h) for h in head]
    cost = [float(c) for c in cost]
    n_arcs = len(tail)
    flow = [0.0] * n_arcs
    pot = [0.0] * n
    out_arcs = [[] for _ in range(n)]
    in_arcs = [[] for _ in range(n)]
    for a in range(n_arcs):
        out_arcs[tail[a]].append(a)
        in_arcs[head[a]].append(a)
    rem = list(supply)
    n_aug = 0
    inf = math.inf
    while True:
        sources = [v for v in range(n) if rem[v] > tol]
        if not sources or not any(r < -tol for r in rem):
            break
        dist = [inf] * n
        pred = [-1] * n  # arc index, a (forward) or -2 - a (reverse); -1 = none
        done = [False] * n
        heap = []
        for v in sources:
            dist[v] = 0.0
            heap.append((0.0, v))
        heapq.heapify(heap)
        target = -1
        while heap:
            du, u = heapq.heappop(heap)
            if done[u] or du > dist[u]:
                continue
            done[u] = True
            if rem[u] < -tol:
                target = u
                break
            pu = pot[u]
            for a in out_arcs[u]:
                v = head[a]
                if done[v]:
                    continue
                rc = cost[a] + pu - pot[v]
                if rc < 0.0:
                    rc = 0.0
                nd = du + rc
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = a
                    heapq.heappush(heap, (nd, v))
            for a in in_arcs[u]:
                if flow[a] <= tol:
                    continue
                v = tail[a]
                if done[v]:
                    continue
                rc = -cost[a] + pu - pot[v]
                if rc < 0.0:
                    rc = 0.0
                nd = du + rc
                if nd < dist[v]:
                    dist[v] = nd
                    pred[v] = -2 - a
                    heapq.heappush(heap, (nd, v))
        if target < 0:
            break
        dt = dist[target]
        for v in range(n):
            pot[v] += dist[v] if dist[v] < dt else dt
        # walk back to the source, find bottleneck
        amount = -rem[target]
        v = target
        while pred[v] != -1:
            a = pred[v]
            if a >= 0:
                v = tail[a]
            else:
                a = -2 - a
                if flow[a] < amount:
                    amount = flow[a]
                v = head[a]
        if rem[v] < amount:
            amount = rem[v]
        src = v
        v = target
        while pred[v] != -1:
            a = pred[v]
            if a >= 0:
                flow[a] += amount
                v = tail[a]
            else:
                a = -2 - a
                flow[a] -= amount
                if flow[a] < 0.0:
                    flow[a] = 0.0
                v = head[a]
        rem[src] -= amount
        rem[target] += amount
        n_aug += 1
    return np.array(flow), np.array(pot), n_aug
