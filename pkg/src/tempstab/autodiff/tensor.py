"""Tensor and tape: the recording side of reverse-mode differentiation."""
from __future__ import annotations

import contextlib
import threading

import numpy as np


class Tensor:
    """Dense float64 array with optional participation in the gradient tape.

    Parameters
    ----------
    data : array_like
        Values; always stored as a float64 ndarray.
    requires_grad : bool
        When True the tensor is a leaf whose ``grad`` is filled by
        :func:`backward`.
    name : str, optional
        Label used in diagnostics and checkpoints.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.frozen = False
        self._op = None  # set for tensors produced by a recorded op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._op is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; the ops module does the work
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Entry:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Entries are appended in execution order, which is a topological order of
    the graph; :meth:`backward` walks them once in reverse.
    """

    def __init__(self):
        self.entries = []
        self.enabled = True

    def __len__(self):
        return len(self.entries)

    def reset(self):
        for e in self.entries:
            e.output._op = None
        self.entries = []

    def append(self, kind, inputs, output, backward):
        entry = _Entry(kind, inputs, output, backward)
        output._op = entry
        self.entries.append(entry)

    def backward(self, loss, retain=False):
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise ValueError(f"backward needs a single-element tensor, got shape {shape}")
        if loss._op is None and not loss.requires_grad:
            raise ValueError("loss is not on the tape; nothing requires grad")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            in_grads = entry.backward(g)
            for t, gi in zip(entry.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._op is None:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads[key]
            t.grad = g.copy() if t.grad is None else t.grad + g
        if loss._op is None and loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        if not retain:
            self.reset()


_local = threading.local()


def current_tape():
    """The calling thread's tape (created on first use)."""
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def grad_enabled():
    return current_tape().enabled


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block."""
    tape = current_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def backward(loss, retain=False):
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    The tape is consumed unless ``retain`` is set.
    """
    current_tape().backward(loss, retain=retain)


def reset_tape():
    current_tape().reset()
