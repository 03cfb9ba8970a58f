"""Causal stabilization adapters spliced into a frozen frame-wise model.

Every stabilizer blends the current activation ``z_t`` with the previous
stabilized activation ``zs_{t-1}`` of the same layer. Variants differ in
where the blend weights come from: a fixed or learned per-channel decay
(:class:`EmaStabilizer`), a controller network looking at the current and
previous frames and features (:class:`ControlledStabilizer`), or a
controller emitting a softmax kernel over a spatial neighbourhood of the
previous map (:class:`SpatialFusionStabilizer`).

The first step after a reset uses ``zs_0 = z_1``, so the first output is the
unstabilized activation.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, ops
from .models import freeze

KINDS = ("ema_fixed", "ema_learned", "controlled", "spatial")


class StateError(RuntimeError):
    """A stabilizer was stepped with a state that was never reset."""


class LayerMemory:
    __slots__ = ("prev_out", "prev_in", "extra")

    def __init__(self, prev_out, prev_in, extra=None):
        self.prev_out = prev_out
        self.prev_in = prev_in
        self.extra = extra or {}


class StabilizerState:
    """Per-layer memory carried across time steps of one stream."""

    def __init__(self):
        self.layers = None
        self.t = None

    @property
    def ready(self):
        return self.layers is not None

    def reset(self):
        self.layers = {}
        self.t = 0

    def require(self):
        if not self.ready:
            raise StateError("stabilizer state is uninitialized; call reset() first")

    def get(self, name):
        self.require()
        return self.layers.get(name)

    def put(self, name, memory):
        self.require()
        self.layers[name] = memory


class StepContext:
    """Inputs shared by all stabilizers during one time step."""

    def __init__(self, x_t, x_prev):
        self.x_t = x_t
        self.x_prev = x_prev
        self._backbone = {}
        self.decays = {}

    def backbone(self, controller):
        key = id(controller)
        if key not in self._backbone:
            self._backbone[key] = controller.backbone(self.x_t, self.x_prev)
        return self._backbone[key]


def _check_beta(beta):
    data = beta.data if isinstance(beta, Tensor) else np.asarray(beta, dtype=np.float64)
    if np.any(data < 0.0) or np.any(data > 1.0) or not np.all(np.isfinite(data)):
        raise ValueError("decay beta must lie in [0, 1]")


def ema_step(z, prev, beta):
    """``beta * z + (1 - beta) * prev``; ``prev=None`` (first step) returns z."""
    _check_beta(beta)
    if prev is None:
        return z if isinstance(z, Tensor) else Tensor(z)
    return ops.add(ops.mul(beta, z), ops.mul(ops.sub(1.0, beta), prev))


# -- simple EMA ----------------------------------------------------------------

class EmaStabilizer:
    """EMA with a decay that is fixed, or learned as ``sigmoid(logit)``.

    ``beta`` given: a fixed global decay, no trainable parameters.
    Otherwise one logit per channel (``per_channel``) or one global logit,
    initialized to ``init_logit``.
    """

    kind = "ema"

    def __init__(self, channels, beta=None, per_channel=True, init_logit=4.0, name="ema"):
        self.channels = channels
        self.fixed_beta = None if beta is None else float(beta)
        self.params = {}
        if self.fixed_beta is not None:
            _check_beta(self.fixed_beta)
        else:
            n = channels if per_channel else 1
            self.params[f"{name}.logits"] = Tensor(np.full(n, float(init_logit)),
                                                  requires_grad=True, name=f"{name}.logits")
        self.name = name

    def parameters(self):
        return dict(self.params)

    def decay(self, z, mem, ctx):
        if self.fixed_beta is not None:
            return self.fixed_beta
        (logits,) = self.params.values()
        beta = ops.sigmoid(logits)
        if logits.shape[0] == 1:
            return beta
        return ops.broadcast_channels(beta, z.shape)

    def step(self, z, mem, ctx):
        if mem is None:
            return z, {}
        return ema_step(z, mem.prev_out, self.decay(z, mem, ctx)), {}


# -- controller ------------------------------------------------------------------

def _conv_init(rng, cout, cin, k=3):
    return rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / (cin * k * k))


class Controller:
    """Shared backbone over (x_t, x_{t-1}) plus one head per stabilized layer.

    All convolutions are 3x3; every layer except a head's output is followed
    by a leaky ReLU. A head's output layer starts at zero weights and adds a
    learnable final bias, so at initialization every predicted logit equals
    that bias.
    """

    def __init__(self, frame_channels, width=8, depth=3, head_width=8, head_depth=2,
                 v=4.0, seed=0, resize_mode="bilinear", name="controller"):
        self.frame_channels = frame_channels
        self.width, self.depth = width, depth
        self.head_width, self.head_depth = head_width, head_depth
        self.v = float(v)
        self.resize_mode = resize_mode
        self.name = name
        self.rng = np.random.default_rng(seed)
        self.params = {}
        cin = 2 * frame_channels
        for i in range(depth):
            self._add(f"backbone.w{i}", _conv_init(self.rng, width, cin))
            self._add(f"backbone.b{i}", np.zeros(width))
            cin = width
        self.heads = {}

    def _add(self, key, data):
        full = f"{self.name}.{key}"
        self.params[full] = Tensor(data, requires_grad=True, name=full)
        return self.params[full]

    def config(self):
        return {"width": self.width, "depth": self.depth, "head_width": self.head_width,
                "head_depth": self.head_depth, "v": self.v, "resize_mode": self.resize_mode}

    def parameters(self):
        return dict(self.params)

    def add_head(self, key, feature_channels, out_channels, bias_init, feature_inputs=True):
        """Register a head; its input is the backbone output, optionally
        concatenated with (z_t, zs_{t-1}, z_{t-1})."""
        cin = self.width + (3 * feature_channels if feature_inputs else 0)
        layers = []
        for i in range(self.head_depth - 1):
            layers.append((self._add(f"head.{key}.w{i}", _conv_init(self.rng, self.head_width, cin)),
                           self._add(f"head.{key}.b{i}", np.zeros(self.head_width))))
            cin = self.head_width
        w_out = self._add(f"head.{key}.w_out", np.zeros((out_channels, cin, 3, 3)))
        bias = self._add(f"head.{key}.bias", np.full(out_channels, float(bias_init)))
        self.heads[key] = {"layers": layers, "w_out": w_out, "bias": bias,
                           "feature_inputs": feature_inputs, "feature_channels": feature_channels}
        return key

    def backbone(self, x_t, x_prev):
        a = ops.concat([x_t, x_prev], axis=0)
        for i in range(self.depth):
            a = ops.leaky_relu(ops.conv2d(a, self.params[f"{self.name}.backbone.w{i}"],
                                          self.params[f"{self.name}.backbone.b{i}"]))
        return a

    def head(self, key, g, features=None):
        """Raw logits of head ``key``; ``features`` is (z_t, zs_prev, z_prev) or None."""
        h = self.heads[key]
        if h["feature_inputs"]:
            if features is None:
                c = h["feature_channels"]
                features = [Tensor(np.zeros((c,) + g.shape[1:]))] * 3
            a = ops.concat([g, *features], axis=0)
        else:
            a = g
        for w, b in h["layers"]:
            a = ops.leaky_relu(ops.conv2d(a, w, b))
        return ops.conv2d(a, h["w_out"], h["bias"])


def _resized_backbone(controller, ctx, z):
    g = ctx.backbone(controller)
    if g.shape[1:] != z.shape[1:]:
        g = ops.resize(g, z.shape[1:], controller.resize_mode)
    return g


class ControlledStabilizer:
    """EMA whose per-element decay is predicted by a controller head."""

    kind = "controlled"

    def __init__(self, controller, layer, channels, feature_inputs=True, head_key=None):
        self.controller = controller
        self.layer = layer
        self.channels = channels
        self.feature_inputs = feature_inputs
        self.head_key = head_key or layer
        controller.add_head(self.head_key, channels, channels, controller.v, feature_inputs)

    def parameters(self):
        return self.controller.parameters()

    def decay(self, z, mem, ctx, strip_features=False):
        g = _resized_backbone(self.controller, ctx, z)
        prev = z if mem is None else mem.prev_out
        zprev = z if mem is None else mem.prev_in
        feats = None if strip_features else (z, prev, zprev)
        return ops.sigmoid(self.controller.head(self.head_key, g, feats))

    def step(self, z, mem, ctx):
        beta = self.decay(z, mem, ctx)
        ctx.decays[self.layer] = beta
        if mem is None:
            return z, {}
        return ema_step(z, mem.prev_out, beta), {}


def neighborhood_mask(k, h, w):
    """(k*k, H, W) validity of each tap; taps are row-major over (dy, dx)."""
    r = k // 2
    ys, xs = np.arange(h)[:, None], np.arange(w)[None, :]
    mask = np.empty((k * k, h, w), dtype=bool)
    l = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            mask[l] = (ys + dy >= 0) & (ys + dy < h) & (xs + dx >= 0) & (xs + dx < w)
            l += 1
    return mask


def spatial_fusion(logits, z, prev, k):
    """Blend ``z`` with the k x k neighbourhood of ``prev`` using softmax
    weights over ``k*k`` predicted logits plus a structural zero logit for
    the current pixel. Out-of-bounds taps are dropped and the remaining
    weights renormalised."""
    if k % 2 == 0 or k < 1:
        raise ValueError(f"spatial fusion kernel size must be odd, got {k}")
    m = k * k
    mask = neighborhood_mask(k, z.shape[1], z.shape[2])
    weights = ops.softmax_zero(logits, m, mask)
    return ops.neighborhood_blend(weights, z, prev, k), weights


class SpatialFusionStabilizer:
    """Controller head predicts a (k*k + 1)-element softmax kernel per pixel."""

    kind = "spatial"

    def __init__(self, controller, layer, channels, k=3, head_key=None):
        if k % 2 == 0 or k < 1:
            raise ValueError(f"spatial fusion kernel size must be odd, got {k}")
        self.controller = controller
        self.layer = layer
        self.channels = channels
        self.k = k
        self.head_key = head_key or layer
        m = k * k
        # current-pixel weight starts at sigmoid(v), the rest split evenly
        controller.add_head(self.head_key, channels, channels * m, -controller.v - math.log(m))

    def parameters(self):
        return self.controller.parameters()

    def logits(self, z, mem, ctx):
        g = _resized_backbone(self.controller, ctx, z)
        prev = z if mem is None else mem.prev_out
        zprev = z if mem is None else mem.prev_in
        return self.controller.head(self.head_key, g, (z, prev, zprev))

    def step(self, z, mem, ctx):
        if mem is None:
            # zs_0 = z_1 makes the first step the identity
            return z, {}
        prev = mem.prev_out
        out, weights = spatial_fusion(self.logits(z, mem, ctx), z, prev, self.k)
        ctx.decays[self.layer] = weights
        return out, {}


class ComposedStabilizer:
    """Training-free fusion of two controlled stabilizers.

    Commutative form: a single EMA with decay ``beta1 * beta2``.
    Sequential form: stage one runs with its own private memory, stage two
    blends that result with the fused previous output.
    """

    kind = "composed"

    def __init__(self, first, second, commutative=True, strip_features=False):
        for s in (first, second):
            if not isinstance(s, ControlledStabilizer):
                raise TypeError(f"only controlled (non-spatial) stabilizers compose, got {type(s).__name__}")
            if s.feature_inputs and not strip_features:
                raise ValueError("composition needs heads driven by the backbone only; build them with "
                                 "feature_inputs=False or pass strip_features=True")
        self.first, self.second = first, second
        self.commutative = commutative
        self.strip_features = strip_features
        self.layer = first.layer

    def parameters(self):
        p = dict(self.first.parameters())
        p.update(self.second.parameters())
        return p

    def step(self, z, mem, ctx):
        b1 = self.first.decay(z, mem, ctx, strip_features=True)
        b2 = self.second.decay(z, mem, ctx, strip_features=True)
        if mem is None:
            return z, ({} if self.commutative else {"stage1": z})
        prev = mem.prev_out
        if self.commutative:
            beta = ops.mul(b1, b2)
            ctx.decays[self.layer] = beta
            return ema_step(z, prev, beta), {}
        stage = ema_step(z, mem.extra["stage1"], b1)
        ctx.decays[self.layer] = (b1, b2)
        return ema_step(stage, prev, b2), {"stage1": stage}


def compose(first, second, commutative=True, strip_features=False):
    return ComposedStabilizer(first, second, commutative, strip_features)


def controller_step(x_t, x_prev, z_t, state, stabilizer):
    """One controlled-EMA step for ``stabilizer.layer``; returns (zs_t, beta).

    ``state`` must have been reset; it is updated with both zs_t and z_t.
    """
    state.require()
    ctx = StepContext(x_t, x_prev)
    mem = state.get(stabilizer.layer)
    out, extra = stabilizer.step(z_t, mem, ctx)
    state.put(stabilizer.layer, LayerMemory(out, z_t, extra))
    return out, ctx.decays.get(stabilizer.layer)


def spatial_fusion_step(x_t, x_prev, z_t, state, stabilizer):
    """One spatial-fusion step; returns zs_t and updates ``state``."""
    out, _ = controller_step(x_t, x_prev, z_t, state, stabilizer)
    return out


# -- wiring into a model -------------------------------------------------------------

class StabilizedModel:
    """A frozen base model with stabilizers on selected layer outputs.

    Call :meth:`reset` at the start of every sequence, then :meth:`step` once
    per frame (or :meth:`run` for a whole stack).
    """

    def __init__(self, base, stabilizers, spec=None, controllers=()):
        if not stabilizers:
            raise ValueError("no layers selected for stabilization")
        unknown = set(stabilizers) - set(base.layer_names)
        if unknown:
            raise ValueError(f"unknown layers {sorted(unknown)}; model has {base.layer_names}")
        self.base = base
        self.stabilizers = dict(stabilizers)
        self.controllers = list(controllers)
        self.spec = spec or {}
        self.state = StabilizerState()
        self._x_prev = None

    def parameters(self):
        out = {}
        for stab in self.stabilizers.values():
            out.update(stab.parameters())
        return {k: v for k, v in out.items() if not v.frozen}

    def all_parameters(self):
        out = dict(self.parameters())
        out.update({f"base.{k}": v for k, v in self.base.params.items()})
        return out

    def reset(self):
        self.state.reset()
        self._x_prev = None

    def step(self, x_t):
        self.state.require()
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        x_prev = x_t if self._x_prev is None else self._x_prev
        ctx = StepContext(x_t, x_prev)
        self.last_context = ctx

        def hook(name, z):
            stab = self.stabilizers.get(name)
            if stab is None:
                return z
            mem = self.state.get(name)
            out, extra = stab.step(z, mem, ctx)
            self.state.put(name, LayerMemory(out, z, extra))
            return out

        y = self.base(x_t, hook)
        self._x_prev = x_t
        self.state.t += 1
        return y

    def run(self, frames, reset=True):
        if reset:
            self.reset()
        return [self.step(f) for f in frames]

    __call__ = run


def _select_layers(model, selector):
    names = list(model.layer_names)
    if isinstance(selector, str):
        if selector == "output":
            chosen = ["output"]
        elif selector == "internal":
            chosen = [n for n in names if n != "output"]
        elif selector == "all":
            chosen = names
        else:
            chosen = [s.strip() for s in selector.split(",") if s.strip()]
    else:
        chosen = list(selector)
    if not chosen:
        raise ValueError("layer selection is empty")
    missing = [c for c in chosen if c not in names]
    if missing:
        raise ValueError(f"layers {missing} not in model layers {names}")
    return chosen


def attach(model, layers, kind, *, beta=None, k=3, v=4.0, per_channel=True, joint=False,
           controller=None, feature_inputs=True, seed=0):
    """Wrap ``model`` with stabilizers of ``kind`` on the selected layers.

    Parameters
    ----------
    model : Module
        Base predictor; frozen unless ``joint``.
    layers : str or list of str
        Layer names, or ``"output"``, ``"internal"``, ``"all"``.
    kind : str
        ``ema_fixed`` (global fixed ``beta``), ``ema_learned`` (one logit per
        channel, initialized to ``v``), ``controlled`` or ``spatial``
        (kernel size ``k``).
    controller : dict, optional
        Extra :class:`Controller` arguments (width, depth, ...).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown stabilizer kind {kind!r}; choose from {KINDS}")
    chosen = _select_layers(model, layers)
    if not joint:
        freeze(model)
    stabs = {}
    controllers = []
    ctrl_cfg = dict(controller or {})
    if kind == "ema_fixed":
        if beta is None:
            raise ValueError("ema_fixed needs beta")
        for name in chosen:
            stabs[name] = EmaStabilizer(model.layer_channels[name], beta=beta, name=f"ema.{name}")
    elif kind == "ema_learned":
        for name in chosen:
            stabs[name] = EmaStabilizer(model.layer_channels[name], per_channel=per_channel,
                                        init_logit=v, name=f"ema.{name}")
    else:
        ctrl = Controller(model.channels, v=v, seed=seed, **ctrl_cfg)
        controllers.append(ctrl)
        for name in chosen:
            c = model.layer_channels[name]
            if kind == "controlled":
                stabs[name] = ControlledStabilizer(ctrl, name, c, feature_inputs=feature_inputs)
            else:
                stabs[name] = SpatialFusionStabilizer(ctrl, name, c, k=k)
    spec = {"kind": kind, "layers": chosen, "beta": beta, "k": k, "v": v,
            "per_channel": per_channel, "joint": joint, "controller": ctrl_cfg,
            "feature_inputs": feature_inputs, "seed": seed}
    return StabilizedModel(model, stabs, spec, controllers)
