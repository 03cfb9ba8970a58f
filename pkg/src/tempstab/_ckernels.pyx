# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``.

Same names, signatures and return conventions; selected at import by
``tempstab._backend``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free

from . import _pykernels

cnp.import_array()

BACKEND = "cython"


# -- 2-D convolution --------------------------------------------------------

def direct_conv2d_forward(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
                          const double[::1] b):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t h = x.shape[1], wd = x.shape[2], r = k // 2
    cdef Py_ssize_t co, ci, ky, kx, yy, xx, sy, x0, x1
    cdef double wv
    out_arr = np.empty((cout, h, wd))
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for co in range(cout):
            for yy in range(h):
                for xx in range(wd):
                    out[co, yy, xx] = b[co]
            for ci in range(cin):
                for ky in range(k):
                    for kx in range(k):
                        wv = w[co, ci, ky, kx]
                        x0 = r - kx
                        if x0 < 0:
                            x0 = 0
                        x1 = wd + r - kx
                        if x1 > wd:
                            x1 = wd
                        for yy in range(h):
                            sy = yy + ky - r
                            if sy < 0 or sy >= h:
                                continue
                            for xx in range(x0, x1):
                                out[co, yy, xx] += wv * x[ci, sy, xx + kx - r]
    return out_arr


def direct_conv2d_backward(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
                           const double[:, :, ::1] gout):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t h = x.shape[1], wd = x.shape[2], r = k // 2
    cdef Py_ssize_t co, ci, ky, kx, yy, xx, sy, x0, x1
    cdef double wv, acc, gsum
    gx_arr = np.zeros((cin, h, wd))
    gw_arr = np.zeros((cout, cin, k, k))
    gb_arr = np.zeros(cout)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    with nogil:
        for co in range(cout):
            gsum = 0.0
            for yy in range(h):
                for xx in range(wd):
                    gsum = gsum + gout[co, yy, xx]
            gb[co] = gsum
            for ci in range(cin):
                for ky in range(k):
                    for kx in range(k):
                        wv = w[co, ci, ky, kx]
                        x0 = r - kx
                        if x0 < 0:
                            x0 = 0
                        x1 = wd + r - kx
                        if x1 > wd:
                            x1 = wd
                        acc = 0.0
                        for yy in range(h):
                            sy = yy + ky - r
                            if sy < 0 or sy >= h:
                                continue
                            for xx in range(x0, x1):
                                acc = acc + gout[co, yy, xx] * x[ci, sy, xx + kx - r]
                            for xx in range(x0, x1):
                                gx[ci, sy, xx + kx - r] += wv * gout[co, yy, xx]
                        gw[co, ci, ky, kx] = acc
    return gx_arr, gw_arr, gb_arr


# Direct loops beat im2col + BLAS only while the channel product is small.
DIRECT_MAX_CHANNELS = 48


def conv2d_forward(x, w, b):
    if w.shape[0] * w.shape[1] > DIRECT_MAX_CHANNELS:
        return _pykernels.conv2d_forward(x, w, b)
    return direct_conv2d_forward(x, w, b)


def conv2d_backward(x, w, gout):
    if w.shape[0] * w.shape[1] > DIRECT_MAX_CHANNELS:
        return _pykernels.conv2d_backward(x, w, gout)
    return direct_conv2d_backward(x, w, gout)


# -- neighborhood blend -----------------------------------------------------

def blend_forward(const double[:, :, :, ::1] wts, const double[:, :, ::1] z,
                  const double[:, :, ::1] prev, int k):
    cdef Py_ssize_t g = wts.shape[0], m1 = wts.shape[1], h = wts.shape[2], wd = wts.shape[3]
    cdef Py_ssize_t r = k // 2, c, yy, xx, sy, sx, l
    cdef int dy, dx
    cdef double acc
    out_arr = np.empty((g, h, wd))
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for c in range(g):
            for yy in range(h):
                for xx in range(wd):
                    acc = wts[c, m1 - 1, yy, xx] * z[c, yy, xx]
                    l = 0
                    for dy in range(-r, r + 1):
                        sy = yy + dy
                        for dx in range(-r, r + 1):
                            sx = xx + dx
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc = acc + wts[c, l, yy, xx] * prev[c, sy, sx]
                            l += 1
                    out[c, yy, xx] = acc
    return out_arr


def blend_backward(const double[:, :, :, ::1] wts, const double[:, :, ::1] z,
                   const double[:, :, ::1] prev, int k, const double[:, :, ::1] gout):
    cdef Py_ssize_t g = wts.shape[0], m1 = wts.shape[1], h = wts.shape[2], wd = wts.shape[3]
    cdef Py_ssize_t r = k // 2, c, yy, xx, sy, sx, l
    cdef int dy, dx
    cdef double go
    gw_arr = np.zeros((g, m1, h, wd))
    gz_arr = np.empty((g, h, wd))
    gp_arr = np.zeros((g, h, wd))
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[:, :, ::1] gz = gz_arr
    cdef double[:, :, ::1] gp = gp_arr
    with nogil:
        for c in range(g):
            for yy in range(h):
                for xx in range(wd):
                    go = gout[c, yy, xx]
                    gw[c, m1 - 1, yy, xx] = go * z[c, yy, xx]
                    gz[c, yy, xx] = go * wts[c, m1 - 1, yy, xx]
                    l = 0
                    for dy in range(-r, r + 1):
                        sy = yy + dy
                        for dx in range(-r, r + 1):
                            sx = xx + dx
                            if 0 <= sy < h and 0 <= sx < wd:
                                gw[c, l, yy, xx] = go * prev[c, sy, sx]
                                gp[c, sy, sx] += go * wts[c, l, yy, xx]
                            l += 1
    return gw_arr, gz_arr, gp_arr


# -- subgradient descent on u -----------------------------------------------

cdef double _u_one(double[:, ::1] x, const double[:, ::1] y, double lam, bint l2) noexcept nogil:
    cdef Py_ssize_t tau = x.shape[0], d = x.shape[1], t, j
    cdef double total = 0.0, s, v
    for t in range(tau):
        s = 0.0
        for j in range(d):
            v = x[t, j] - y[t, j]
            if l2:
                s += v * v
            else:
                s += fabs(v)
        total += sqrt(s) if l2 else s
    for t in range(tau - 1):
        s = 0.0
        for j in range(d):
            v = x[t, j] - x[t + 1, j]
            if l2:
                s += v * v
            else:
                s += fabs(v)
        total += lam * (sqrt(s) if l2 else s)
    return total


cdef inline double _sgn(double v) noexcept nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


def subgradient_descent(y_in, starts, double lam, bint l2, bint fix_first,
                        int iters, double step0, double decay):
    cdef double[:, ::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    x_arr = np.array(starts, dtype=np.float64, copy=True, order="C")
    best_arr = x_arr.copy()
    cdef double[:, :, ::1] x = x_arr
    cdef double[:, :, ::1] best = best_arr
    cdef Py_ssize_t R = x.shape[0], tau = x.shape[1], d = x.shape[2]
    bu_arr = np.empty(R)
    cdef double[::1] best_u = bu_arr
    g_arr = np.zeros((tau, d))
    cdef double[:, ::1] g = g_arr
    cdef Py_ssize_t r, t, j, it
    cdef double step, n, gn, v, u
    for r in range(R):
        best_u[r] = _u_one(x[r], y, lam, l2)
        step = step0
        for it in range(iters):
            for t in range(tau):
                if l2:
                    n = 0.0
                    for j in range(d):
                        v = x[r, t, j] - y[t, j]
                        n += v * v
                    n = sqrt(n)
                    for j in range(d):
                        g[t, j] = (x[r, t, j] - y[t, j]) / n if n > 0 else 0.0
                else:
                    for j in range(d):
                        g[t, j] = _sgn(x[r, t, j] - y[t, j])
            for t in range(tau - 1):
                if l2:
                    n = 0.0
                    for j in range(d):
                        v = x[r, t, j] - x[r, t + 1, j]
                        n += v * v
                    n = sqrt(n)
                    if n > 0:
                        for j in range(d):
                            v = lam * (x[r, t, j] - x[r, t + 1, j]) / n
                            g[t, j] += v
                            g[t + 1, j] -= v
                else:
                    for j in range(d):
                        v = lam * _sgn(x[r, t, j] - x[r, t + 1, j])
                        g[t, j] += v
                        g[t + 1, j] -= v
            if fix_first:
                for j in range(d):
                    g[0, j] = 0.0
            gn = 0.0
            for t in range(tau):
                for j in range(d):
                    gn += g[t, j] * g[t, j]
            gn = sqrt(gn)
            if gn == 0:
                gn = 1.0
            for t in range(tau):
                for j in range(d):
                    x[r, t, j] -= step / gn * g[t, j]
            u = _u_one(x[r], y, lam, l2)
            if u < best_u[r]:
                best_u[r] = u
                best[r, :, :] = x[r, :, :]
            step *= decay
    return best_arr, bu_arr


# -- min-cost flow by successive shortest paths -----------------------------

cdef struct HeapItem:
    double key
    Py_ssize_t node


cdef void _heap_push(HeapItem* heap, Py_ssize_t* size, double key, Py_ssize_t node) noexcept nogil:
    cdef Py_ssize_t i = size[0], p
    cdef HeapItem tmp
    size[0] += 1
    heap[i].key = key
    heap[i].node = node
    while i > 0:
        p = (i - 1) // 2
        if heap[p].key <= heap[i].key:
            break
        tmp = heap[p]
        heap[p] = heap[i]
        heap[i] = tmp
        i = p


cdef HeapItem _heap_pop(HeapItem* heap, Py_ssize_t* size) noexcept nogil:
    cdef HeapItem top = heap[0], tmp
    cdef Py_ssize_t i = 0, c, n
    size[0] -= 1
    n = size[0]
    heap[0] = heap[n]
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        if c + 1 < n and heap[c + 1].key < heap[c].key:
            c += 1
        if heap[i].key <= heap[c].key:
            break
        tmp = heap[c]
        heap[c] = heap[i]
        heap[i] = tmp
        i = c
    return top


def min_cost_flow(Py_ssize_t n, supply_in, tail_in, head_in, cost_in, double tol):
    cdef double[::1] rem = np.array(supply_in, dtype=np.float64, copy=True)
    cdef long long[::1] tail = np.ascontiguousarray(tail_in, dtype=np.int64)
    cdef long long[::1] head = np.ascontiguousarray(head_in, dtype=np.int64)
    cdef double[::1] cost = np.ascontiguousarray(cost_in, dtype=np.float64)
    cdef Py_ssize_t n_arcs = tail.shape[0]
    flow_arr = np.zeros(n_arcs)
    pot_arr = np.zeros(n)
    cdef double[::1] flow = flow_arr
    cdef double[::1] pot = pot_arr

    # CSR adjacency for outgoing and incoming arcs
    out_ptr_arr = np.zeros(n + 1, dtype=np.int64)
    in_ptr_arr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(out_ptr_arr, np.asarray(tail_in, dtype=np.int64) + 1, 1)
    np.add.at(in_ptr_arr, np.asarray(head_in, dtype=np.int64) + 1, 1)
    out_ptr_arr = np.cumsum(out_ptr_arr)
    in_ptr_arr = np.cumsum(in_ptr_arr)
    out_idx_arr = np.argsort(np.asarray(tail_in, dtype=np.int64), kind="stable").astype(np.int64)
    in_idx_arr = np.argsort(np.asarray(head_in, dtype=np.int64), kind="stable").astype(np.int64)
    cdef long long[::1] out_ptr = out_ptr_arr
    cdef long long[::1] in_ptr = in_ptr_arr
    cdef long long[::1] out_idx = out_idx_arr
    cdef long long[::1] in_idx = in_idx_arr

    dist_arr = np.empty(n)
    pred_arr = np.empty(n, dtype=np.int64)
    done_arr = np.empty(n, dtype=np.uint8)
    cdef double[::1] dist = dist_arr
    cdef long long[::1] pred = pred_arr
    cdef unsigned char[::1] done = done_arr

    cdef Py_ssize_t heap_cap = 2 * n_arcs + 2 * n + 4
    cdef HeapItem* heap = <HeapItem*> malloc(heap_cap * sizeof(HeapItem))
    if heap == NULL:
        raise MemoryError()
    cdef Py_ssize_t hsize, v, u, q, target, src
    cdef long long a, aa
    cdef double du, rc, nd, dt, amount
    cdef bint has_src, has_sink
    cdef long n_aug = 0
    cdef HeapItem it
    try:
        with nogil:
            while True:
                has_src = False
                has_sink = False
                for v in range(n):
                    if rem[v] > tol:
                        has_src = True
                    elif rem[v] < -tol:
                        has_sink = True
                if not has_src or not has_sink:
                    break
                hsize = 0
                for v in range(n):
                    pred[v] = -1
                    done[v] = 0
                    if rem[v] > tol:
                        dist[v] = 0.0
                        _heap_push(heap, &hsize, 0.0, v)
                    else:
                        dist[v] = INFINITY
                target = -1
                while hsize > 0:
                    it = _heap_pop(heap, &hsize)
                    u = it.node
                    du = it.key
                    if done[u] or du > dist[u]:
                        continue
                    done[u] = 1
                    if rem[u] < -tol:
                        target = u
                        break
                    for q in range(out_ptr[u], out_ptr[u + 1]):
                        a = out_idx[q]
                        v = head[a]
                        if done[v]:
                            continue
                        rc = cost[a] + pot[u] - pot[v]
                        if rc < 0.0:
                            rc = 0.0
                        nd = du + rc
                        if nd < dist[v]:
                            dist[v] = nd
                            pred[v] = a
                            if hsize >= heap_cap:
                                break
                            _heap_push(heap, &hsize, nd, v)
                    for q in range(in_ptr[u], in_ptr[u + 1]):
                        a = in_idx[q]
                        if flow[a] <= tol:
                            continue
                        v = tail[a]
                        if done[v]:
                            continue
                        rc = -cost[a] + pot[u] - pot[v]
                        if rc < 0.0:
                            rc = 0.0
                        nd = du + rc
                        if nd < dist[v]:
                            dist[v] = nd
                            pred[v] = -2 - a
                            if hsize >= heap_cap:
                                break
                            _heap_push(heap, &hsize, nd, v)
                if target < 0:
                    break
                dt = dist[target]
                for v in range(n):
                    if dist[v] < dt:
                        pot[v] += dist[v]
                    else:
                        pot[v] += dt
                amount = -rem[target]
                v = target
                while pred[v] != -1:
                    a = pred[v]
                    if a >= 0:
                        v = tail[a]
                    else:
                        aa = -2 - a
                        if flow[aa] < amount:
                            amount = flow[aa]
                        v = head[aa]
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
                        aa = -2 - a
                        flow[aa] -= amount
                        if flow[aa] < 0.0:
                            flow[aa] = 0.0
                        v = head[aa]
                rem[src] -= amount
                rem[target] += amount
                n_aug += 1
    finally:
        free(heap)
    return flow_arr, pot_arr, int(n_aug)
