"""Time the compiled kernels against the numpy / pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends are fed identical inputs; their outputs are compared before
timing so a fast but wrong kernel cannot pass unnoticed.
"""
import argparse
import timeit

import numpy as np

from tempstab._backend import compiled_kernels, python_kernels
from tempstab.transport import prune_edges


def cases(rng):
    convs = {}
    for cin, cout in ((1, 8), (8, 8), (32, 32)):
        x = rng.standard_normal((cin, 32, 32))
        w = rng.standard_normal((cout, cin, 3, 3))
        b = rng.standard_normal(cout)
        g = rng.standard_normal((cout, 32, 32))
        convs[f"conv2d fwd+bwd ({cin}->{cout} ch, 32x32)"] = (
            lambda k, x=x, w=w, b=b, g=g: (k.conv2d_forward(x, w, b), k.conv2d_backward(x, w, g)),
            None)
    g = rng.standard_normal((8, 32, 32))
    wts = rng.random((8, 10, 32, 32))
    wts /= wts.sum(1, keepdims=True)
    z, prev = rng.standard_normal((8, 32, 32)), rng.standard_normal((8, 32, 32))
    y = rng.standard_normal((6, 2))
    starts = y[None] + rng.standard_normal((20, 6, 2))

    a = rng.standard_normal((16, 16))
    flat = a.ravel()
    pos, neg = np.flatnonzero(flat > 0), np.flatnonzero(flat < 0)
    node = np.full(flat.size, -1)
    node[pos] = np.arange(pos.size)
    node[neg] = pos.size + np.arange(neg.size)
    vc, vd = pos.size + neg.size, pos.size + neg.size + 1
    i, j, d = prune_edges(a.shape, 1.5)
    f = (flat[i] > 0) & (flat[j] < 0)
    r = (flat[i] < 0) & (flat[j] > 0)
    tail = np.concatenate([node[i[f]], node[j[r]], np.arange(pos.size), np.full(neg.size, vc), [vc]])
    head = np.concatenate([node[j[f]], node[i[r]], np.full(pos.size, vd),
                           pos.size + np.arange(neg.size), [vd]])
    cost = np.concatenate([d[f], d[r], np.full(pos.size + neg.size, 1.5), [0.0]])
    supply = np.concatenate([flat[pos], flat[neg], [-flat[neg].sum(), -flat[pos].sum()]])

    # iterative kernels may take different (equally good) paths: compare objectives
    return {
        **convs,
        "neighborhood blend fwd+bwd (k=3)":
            (lambda k: (k.blend_forward(wts, z, prev, 3), k.blend_backward(wts, z, prev, 3, g)), None),
        "subgradient descent (20 restarts, 1500 it)":
            (lambda k: k.subgradient_descent(y, starts, 0.4, True, False, 1500, 1.0, 0.99),
             lambda out: out[1]),
        "min-cost flow (16x16 map, gamma 1.5)":
            (lambda k: k.min_cost_flow(vd + 1, supply, tail, head, cost, 1e-12),
             lambda out: cost @ out[0]),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return [a for o in out for a in _flatten(o)]
    return [np.asarray(out, dtype=np.float64)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = compiled_kernels()
    if fast is None:
        print("compiled kernels are not built; only the fallback is available")
        return 1
    slow = python_kernels
    print(f"{'kernel':<45}{'compiled':>12}{'fallback':>12}{'speedup':>10}")
    for name, (fn, objective) in cases(np.random.default_rng(0)).items():
        ra, rb = fn(fast), fn(slow)
        if objective is None:
            a, b, tol = _flatten(ra), _flatten(rb), 1e-9
        else:
            a, b, tol = _flatten(objective(ra)), _flatten(objective(rb)), 1e-6
        agree = all(np.allclose(u, v, rtol=tol, atol=tol) for u, v in zip(a, b))
        t_fast = min(timeit.repeat(lambda: fn(fast), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: fn(slow), number=1, repeat=args.repeat))
        flag = "" if agree else "  OUTPUTS DIFFER"
        print(f"{name:<45}{t_fast * 1e3:>10.2f}ms{t_slow * 1e3:>10.2f}ms{t_slow / t_fast:>9.1f}x{flag}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
