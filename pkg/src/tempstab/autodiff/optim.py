"""Adam with a step-decay learning-rate schedule."""
import numpy as np


class FrozenParameterError(RuntimeError):
    """An optimizer was asked to update a frozen parameter."""


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        for p in self.params:
            if p.frozen:
                raise FrozenParameterError(f"parameter {p.name or p.shape} is frozen")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.frozen:
                raise FrozenParameterError(f"parameter {p.name or p.shape} is frozen")
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def step_lr(initial, epoch, drops, factor=0.1):
    """Learning rate for a 0-based ``epoch``: ``initial * factor**k`` after k drops."""
    return initial * factor ** sum(1 for d in drops if epoch >= d)
