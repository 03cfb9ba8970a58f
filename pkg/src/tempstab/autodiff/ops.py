"""Differentiable operations.

Each op computes its forward value with numpy (or a backend kernel) and, if
any input requires grad and recording is enabled, appends a local-gradient
rule to the thread's tape. Broadcasting is limited to a single-element
operand against a tensor; per-channel scaling goes through
:func:`broadcast_channels`.
"""
import numpy as np

from .._backend import kernels
from .tensor import Tensor, current_tape

LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _emit(kind, inputs, out_data, backward):
    tape = current_tape()
    needs = tape.enabled and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.append(kind, inputs, out, backward)
    return out


def _reduce_to(g, shape):
    """Sum a gradient down to a single-element operand's shape."""
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _check_pair(kind, a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} are incompatible "
                     "(only equal shapes or a single-element operand are allowed)")


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_pair("add", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)
    return _emit("add", (a, b), a.data + b.data, bw)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_pair("sub", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)
    return _emit("sub", (a, b), a.data - b.data, bw)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_pair("mul", a, b)

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)
    return _emit("mul", (a, b), a.data * b.data, bw)


def sigmoid(x):
    x = _wrap(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        return (g * s * (1.0 - s),)
    return _emit("sigmoid", (x,), s, bw)


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = _wrap(x)
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def bw(g):
        return (np.where(pos, g, slope * g),)
    return _emit("leaky_relu", (x,), out, bw)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    x = _wrap(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return (g * inside,)
    return _emit("clip", (x,), np.clip(x.data, lo, hi), bw)


def broadcast_channels(v, shape):
    """Expand a per-channel vector (C,) to a (C, ...) tensor."""
    v = _wrap(v)
    if v.data.ndim != 1 or v.shape[0] != shape[0]:
        raise ShapeError(f"broadcast_channels: vector {v.shape} does not match leading extent of {shape}")
    expand = (slice(None),) + (None,) * (len(shape) - 1)
    axes = tuple(range(1, len(shape)))

    def bw(g):
        return (g.sum(axis=axes),)
    return _emit("broadcast_channels", (v,), np.broadcast_to(v.data[expand], shape).copy(), bw)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def bw(g):
        return g @ b.data.T, a.data.T @ g
    return _emit("matmul", (a, b), a.data @ b.data, bw)


def conv2d(x, w, b=None):
    """Same-padded 2-D convolution of a (C_in, H, W) map with odd square kernels."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[1] != x.shape[0] \
            or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: input {x.shape} and weight {w.shape} are incompatible")
    if b is None:
        b = Tensor(np.zeros(w.shape[0]))
    b = _wrap(b)
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {w.shape[0]} output channels")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xd, wd, b.data)

    def bw(g):
        gx, gw, gb = kernels.conv2d_backward(xd, wd, np.ascontiguousarray(g))
        return gx, gw, gb
    return _emit("conv2d", (x, w, b), out, bw)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _emit("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), bw)


def _interp_matrix(n_out, n_in, mode):
    m = np.zeros((n_out, n_in))
    if mode == "nearest":
        src = np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1)
        m[np.arange(n_out), src] = 1.0
        return m
    # bilinear, half-pixel centres
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize(x, size, mode="bilinear"):
    """Resize a (C, H, W) map to ``size`` = (H', W'); identity when sizes match."""
    x = _wrap(x)
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"resize: unknown mode {mode!r}")
    h2, w2 = size
    ry = _interp_matrix(h2, x.shape[1], mode)
    rx = _interp_matrix(w2, x.shape[2], mode)
    out = np.einsum("ah,chw,bw->cab", ry, x.data, rx)

    def bw(g):
        return (np.einsum("ah,cab,bw->chw", ry, g, rx),)
    return _emit("resize", (x,), out, bw)


# -- softmax with a structural zero logit ------------------------------------

def softmax_zero(logits, m, mask=None):
    """Grouped softmax with one extra logit fixed at zero.

    ``logits`` has shape (G*m, H, W); channel ``g*m + l`` is logit ``l`` of
    group ``g``. Returns weights of shape (G, m+1, H, W) whose last slot
    belongs to the zero logit. ``mask`` (m, H, W) marks valid taps; invalid
    taps get zero weight and the rest are renormalised.
    """
    logits = _wrap(logits)
    gm, h, w = logits.shape
    if gm % m:
        raise ShapeError(f"softmax_zero: {gm} logit channels is not a multiple of m={m}")
    g = gm // m
    z = np.concatenate([logits.data.reshape(g, m, h, w), np.zeros((g, 1, h, w))], axis=1)
    valid = np.ones((m + 1, h, w), dtype=bool)
    if mask is not None:
        valid[:m] = np.asarray(mask, dtype=bool)
    z = np.where(valid[None], z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(gout):
        inner = (gout * s).sum(axis=1, keepdims=True)
        gz = s * (gout - inner)
        return (gz[:, :m].reshape(gm, h, w),)
    return _emit("softmax_zero", (logits,), s, bw)


def neighborhood_blend(weights, z, prev, k):
    """out = w[:, m] * z + sum_l w[:, l] * prev shifted to tap l (zero outside)."""
    weights, z, prev = _wrap(weights), _wrap(z), _wrap(prev)
    g, m1, h, w = weights.shape
    if m1 != k * k + 1 or z.shape != (g, h, w) or prev.shape != (g, h, w):
        raise ShapeError(f"neighborhood_blend: weights {weights.shape}, z {z.shape}, "
                         f"prev {prev.shape} do not fit k={k}")
    wd = np.ascontiguousarray(weights.data)
    zd = np.ascontiguousarray(z.data)
    pd = np.ascontiguousarray(prev.data)
    out = kernels.blend_forward(wd, zd, pd, k)

    def bw(gout):
        return kernels.blend_backward(wd, zd, pd, k, np.ascontiguousarray(gout))
    return _emit("neighborhood_blend", (weights, z, prev), out, bw)


# -- reductions ----------------------------------------------------------------

def sum(x):  # noqa: A001 - mirrors numpy naming
    x = _wrap(x)

    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)
    return _emit("sum", (x,), np.array(x.data.sum()), bw)


def mean(x):
    x = _wrap(x)
    n = x.size

    def bw(g):
        return (np.full(x.shape, float(g) / n),)
    return _emit("mean", (x,), np.array(x.data.mean()), bw)


def sq_err(a, b, reduction="mean"):
    """Squared-error reduction of a - b ('mean' or 'sum')."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"sq_err: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    scale = 1.0 / d.size if reduction == "mean" else 1.0

    def bw(g):
        gd = 2.0 * scale * float(g) * d
        return gd, -gd
    return _emit("sq_err", (a, b), np.array(scale * (d * d).sum()), bw)


def l2_norm(x):
    """Euclidean norm of all elements; zero subgradient at the origin."""
    x = _wrap(x)
    n = float(np.sqrt((x.data * x.data).sum()))

    def bw(g):
        if n == 0.0:
            return (np.zeros(x.shape),)
        return (float(g) * x.data / n,)
    return _emit("l2_norm", (x,), np.array(n), bw)


def l1_norm(x):
    x = _wrap(x)

    def bw(g):
        return (float(g) * np.sign(x.data),)
    return _emit("l1_norm", (x,), np.array(np.abs(x.data).sum()), bw)


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
    "clip": clip,
    "broadcast_channels": broadcast_channels,
    "matmul": matmul,
    "conv2d": conv2d,
    "concat": concat,
    "resize": resize,
    "softmax_zero": softmax_zero,
    "neighborhood_blend": neighborhood_blend,
    "sum": sum,
    "mean": mean,
    "sq_err": sq_err,
    "l2_norm": l2_norm,
    "l1_norm": l1_norm,
}


def record(op_kind, *inputs, **params):
    """Dispatch ``op_kind`` by name; the result is taped when any input needs grad."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **params)
