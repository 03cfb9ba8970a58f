"""Small frame-wise base predictors and the toy tasks they are trained on."""
from __future__ import annotations

import hashlib

import numpy as np
from scipy import ndimage

from .autodiff import Tensor, ops
from .signals import VideoSequence, generate_sequence


class Module:
    """Named parameters plus a frame-wise ``forward`` with layer hooks.

    ``forward(x, hook)`` calls ``hook(name, activation)`` after every entry
    in ``layer_names`` and continues with whatever the hook returns; this is
    how stabilizers are spliced in without touching the architecture.
    """

    layer_names = ()
    kind = "module"

    def __init__(self):
        self.params = {}
        self.layer_channels = {}

    def parameters(self):
        return dict(self.params)

    def _param(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True, name=name)
        return self.params[name]

    def __call__(self, x, hook=None):
        return self.forward(x, hook)

    def forward(self, x, hook=None):
        raise NotImplementedError

    def config(self):
        return {"kind": self.kind}

    def _check_input(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[0] != self.channels or len(x.shape) != 3:
            raise ValueError(f"{type(self).__name__} expects ({self.channels}, H, W) frames, "
                             f"got shape {x.shape}")
        return x


def _he(rng, shape, gain=1.0):
    fan_in = shape[1] * shape[2] * shape[3]
    return gain * rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class ToyDenoiser(Module):
    """Three 3x3 conv layers predicting a noise residual that is subtracted
    from the input. With all weights zero the model is the identity."""

    layer_names = ("conv1", "conv2", "residual", "output")
    kind = "denoiser"

    def __init__(self, channels=1, width=8, seed=0, zero=False):
        super().__init__()
        self.channels, self.width, self.seed = channels, width, seed
        rng = np.random.default_rng(seed)
        shapes = {"w1": (width, channels, 3, 3), "w2": (width, width, 3, 3),
                  "w3": (channels, width, 3, 3)}
        gains = {"w1": 1.0, "w2": 1.0, "w3": 0.1}
        for name, shp in shapes.items():
            self._param(name, np.zeros(shp) if zero else _he(rng, shp, gains[name]))
        self._param("b1", np.zeros(width))
        self._param("b2", np.zeros(width))
        self._param("b3", np.zeros(channels))
        self.layer_channels = {"conv1": width, "conv2": width, "residual": channels,
                               "output": channels}

    def config(self):
        return {"kind": self.kind, "channels": self.channels, "width": self.width, "seed": self.seed}

    def forward(self, x, hook=None):
        hook = hook or (lambda name, z: z)
        p = self.params
        x = self._check_input(x)
        a = hook("conv1", ops.leaky_relu(ops.conv2d(x, p["w1"], p["b1"])))
        a = hook("conv2", ops.leaky_relu(ops.conv2d(a, p["w2"], p["b2"])))
        r = hook("residual", ops.conv2d(a, p["w3"], p["b3"]))
        return hook("output", ops.sub(x, r))


class ToyEnhancer(Module):
    """3x3 conv, 1x1 (pointwise) conv, 3x3 conv predicting a detail layer that
    is added to the input; the output is clamped to [0, 1]."""

    layer_names = ("conv1", "pointwise", "detail", "output")
    kind = "enhancer"

    def __init__(self, channels=1, width=8, seed=0):
        super().__init__()
        self.channels, self.width, self.seed = channels, width, seed
        rng = np.random.default_rng(seed)
        self._param("w1", _he(rng, (width, channels, 3, 3)))
        self._param("b1", np.zeros(width))
        self._param("w2", _he(rng, (width, width, 1, 1)))
        self._param("b2", np.zeros(width))
        self._param("w3", _he(rng, (channels, width, 3, 3), 0.1))
        self._param("b3", np.zeros(channels))
        self.layer_channels = {"conv1": width, "pointwise": width, "detail": channels,
                               "output": channels}

    def config(self):
        return {"kind": self.kind, "channels": self.channels, "width": self.width, "seed": self.seed}

    def forward(self, x, hook=None):
        hook = hook or (lambda name, z: z)
        p = self.params
        x = self._check_input(x)
        a = hook("conv1", ops.leaky_relu(ops.conv2d(x, p["w1"], p["b1"])))
        a = hook("pointwise", ops.leaky_relu(ops.conv2d(a, p["w2"], p["b2"])))
        d = hook("detail", ops.conv2d(a, p["w3"], p["b3"]))
        return hook("output", ops.clip(ops.add(x, d), 0.0, 1.0))


MODEL_KINDS = {"denoiser": ToyDenoiser, "enhancer": ToyEnhancer}


def build_model(config):
    cfg = dict(config)
    kind = cfg.pop("kind")
    try:
        return MODEL_KINDS[kind](**cfg)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None


def freeze(model, frozen=True):
    """Exclude (or re-include) the model's parameters from gradient updates.

    Idempotent. Frozen parameters stop requiring grad, and an optimizer
    constructed over them refuses to step.
    """
    for p in model.params.values():
        p.frozen = frozen
        p.requires_grad = not frozen
        p.grad = None
    return model


def is_frozen(model):
    return all(p.frozen for p in model.params.values())


def parameter_hash(params):
    """SHA-256 over parameter names and raw bytes, in sorted name order."""
    if isinstance(params, Module):
        params = params.params
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def predict_sequence(model, frames):
    """Frame-wise outputs of ``model`` over a (tau, C, H, W) stack."""
    from .autodiff import no_grad
    with no_grad():
        return np.stack([model(f).data for f in frames])


# -- tasks ----------------------------------------------------------------------

def unsharp_mask(frame, amount=1.0, sigma=1.0):
    """frame + amount * (frame - blur), with a radius-1 Gaussian blur, in [0, 1]."""
    frame = np.asarray(frame, dtype=np.float64)
    blur = np.stack([ndimage.gaussian_filter(ch, sigma, truncate=1.0 / sigma, mode="nearest")
                     for ch in frame])
    return np.clip(frame + amount * (frame - blur), 0.0, 1.0)


TASKS = ("denoise", "enhance")


def task_sequence(task, scene_seed, tau, shape=(1, 32, 32), motion_model="translating_shapes",
                  speed=1):
    """Clean frames with task targets: identity for denoising, unsharp-masked
    frames for enhancement. Noise and other corruptions are applied later."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    seq = generate_sequence(scene_seed, tau, shape, motion_model, speed=speed)
    if task == "enhance":
        targets = np.stack([unsharp_mask(f) for f in seq.frames])
        seq = VideoSequence(seq.frames, targets, seq.fps_hint, seq.meta)
    seq.meta["task"] = task
    return seq
