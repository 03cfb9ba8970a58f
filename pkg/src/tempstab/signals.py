"""Synthetic video sequences and per-frame corruptions.

Random draws for a corruption are keyed on (seed, frame index, kind), so a
frame's corruption does not depend on which other frames were processed or
in what order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

MOTION_MODELS = ("static", "translating_shapes", "oscillating_texture")

CORRUPTION_DEFAULTS = {
    "identity": {},
    "gaussian_noise": {"sigma": 0.1},
    "impulse": {"p_salt": 0.05, "p_pepper": 0.05},
    "patch_drop": {"patch": 8, "p": 0.1},
    "frame_drop": {"p": 0.1},
    "elastic": {"alpha": 50.0, "sigma": 5.0},
}
_KIND_SALT = {k: i for i, k in enumerate(CORRUPTION_DEFAULTS)}


@dataclass
class VideoSequence:
    """Frames and per-frame targets, both stored as (tau, C, H, W) arrays."""

    frames: np.ndarray
    targets: np.ndarray
    fps_hint: float = 30.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (tau, C, H, W), got shape {self.frames.shape}")
        if len(self.frames) < 1 or len(self.frames) != len(self.targets):
            raise ValueError(f"need tau >= 1 frames and as many targets, got "
                             f"{len(self.frames)} frames / {len(self.targets)} targets")

    @property
    def tau(self):
        return len(self.frames)

    @property
    def frame_shape(self):
        return self.frames.shape[1:]

    def __len__(self):
        return self.tau

    def snippet(self, start, length):
        sl = slice(start, start + length)
        return VideoSequence(self.frames[sl], self.targets[sl], self.fps_hint, dict(self.meta))


@dataclass(frozen=True)
class CorruptionSpec:
    """One per-frame perturbation family with its own random stream."""

    kind: str = "identity"
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_DEFAULTS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; "
                             f"choose from {sorted(CORRUPTION_DEFAULTS)}")
        merged = dict(CORRUPTION_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        self.validate()

    def validate(self):
        p = self.params
        for name in ("p", "p_salt", "p_pepper"):
            if name in p and not 0.0 <= p[name] <= 1.0:
                raise ValueError(f"{self.kind}: probability {name}={p[name]} outside [0, 1]")
        if self.kind == "impulse" and p["p_salt"] + p["p_pepper"] > 1.0:
            raise ValueError("impulse: p_salt + p_pepper exceeds 1")
        if self.kind == "gaussian_noise" and p["sigma"] < 0:
            raise ValueError("gaussian_noise: sigma must be >= 0")
        if self.kind == "patch_drop" and (int(p["patch"]) != p["patch"] or p["patch"] < 1):
            raise ValueError("patch_drop: patch must be a positive integer")
        if self.kind == "elastic" and (p["alpha"] < 0 or p["sigma"] <= 0):
            raise ValueError("elastic: need alpha >= 0 and sigma > 0")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))

    @classmethod
    def parse(cls, text):
        """Parse ``kind[:k=v,k=v][:seed]``, e.g. ``patch_drop:patch=8,p=0.1:7``."""
        parts = text.split(":")
        kind = parts[0]
        params = {}
        seed = 0
        if len(parts) > 3:
            raise ValueError(f"corruption {text!r}: expected kind:params:seed")
        if len(parts) >= 2 and parts[1]:
            for item in parts[1].split(","):
                key, _, val = item.partition("=")
                if not _:
                    raise ValueError(f"corruption {text!r}: parameter {item!r} is not key=value")
                params[key.strip()] = float(val)
        if len(parts) == 3 and parts[2]:
            seed = int(parts[2])
        if kind == "patch_drop" and "patch" in params:
            params["patch"] = int(params["patch"])
        return cls(kind, params, seed)


def frame_rng(seed, t, salt=0):
    """Counter-style stream for one (seed, frame, kind) triple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(t), int(salt)]))


# -- scene synthesis -------------------------------------------------------------

def smooth_texture(rng, shape, sigma=2.0, lo=0.2, hi=0.8):
    """Gaussian-filtered noise rescaled to [lo, hi], independently per channel."""
    c, h, w = shape
    out = np.empty(shape)
    for ch in range(c):
        n = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
        n = (n - n.min()) / max(n.max() - n.min(), 1e-12)
        out[ch] = lo + (hi - lo) * n
    return out


def generate_sequence(scene_seed, tau, shape=(1, 32, 32), motion_model="translating_shapes",
                      speed=1, n_objects=3, return_masks=False):
    """Render a clean synthetic clip whose targets equal its frames.

    Parameters
    ----------
    scene_seed : int
        Seed for the scene content and motion.
    tau : int
        Number of frames.
    shape : tuple
        (C, H, W) frame shape.
    motion_model : str
        ``static``, ``translating_shapes`` (textured rectangles moving
        ``speed`` px/frame along an axis, wrapping at the borders, over a
        static background) or ``oscillating_texture`` (a detail layer whose
        contrast oscillates in time).
    return_masks : bool
        Also return object supports, shape (tau, n_objects, H, W), for
        ``translating_shapes``.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) <= 0:
        raise ValueError(f"frame shape must be a positive (C, H, W), got {shape}")
    if motion_model not in MOTION_MODELS:
        raise ValueError(f"unknown motion model {motion_model!r}; choose from {MOTION_MODELS}")
    rng = np.random.default_rng(scene_seed)
    c, h, w = shape
    background = smooth_texture(rng, shape)
    frames = np.empty((tau,) + shape)
    masks = None
    meta = {"scene_seed": int(scene_seed), "motion_model": motion_model, "speed": speed}

    if motion_model == "static":
        frames[:] = background
    elif motion_model == "oscillating_texture":
        detail = smooth_texture(rng, shape, sigma=1.0, lo=-1.0, hi=1.0)
        period = float(rng.uniform(6.0, 12.0))
        phase = float(rng.uniform(0, 2 * math.pi))
        for t in range(tau):
            frames[t] = background + 0.15 * math.sin(2 * math.pi * t / period + phase) * detail
        meta.update(period=period, phase=phase)
    else:
        objs = []
        for _ in range(n_objects):
            oh, ow = (int(v) for v in rng.integers(max(2, h // 5), max(3, h // 3) + 1, size=2))
            tex = smooth_texture(rng, (c, oh, ow), sigma=1.0, lo=0.0, hi=0.35)
            tex += rng.choice([0.0, 0.65])
            direction = [(0, 1), (0, -1), (1, 0), (-1, 0)][int(rng.integers(4))]
            y0, x0 = int(rng.integers(h)), int(rng.integers(w))
            objs.append((tex, direction, y0, x0))
        masks = np.zeros((tau, len(objs), h, w), dtype=bool)
        for t in range(tau):
            f = background.copy()
            for i, (tex, (vy, vx), y0, x0) in enumerate(objs):
                canvas = np.zeros(shape)
                sup = np.zeros((h, w), dtype=bool)
                oh, ow = tex.shape[1:]
                canvas[:, :oh, :ow] = tex
                sup[:oh, :ow] = True
                dy, dx = y0 + vy * speed * t, x0 + vx * speed * t
                canvas = np.roll(canvas, (dy, dx), axis=(1, 2))
                sup = np.roll(sup, (dy, dx), axis=(0, 1))
                f = np.where(sup[None], canvas, f)
                masks[t, i] = sup
            frames[t] = f
        meta["velocities"] = [[d[0] * speed, d[1] * speed] for _, d, _, _ in objs]
    np.clip(frames, 0.0, 1.0, out=frames)
    seq = VideoSequence(frames, frames.copy(), meta=meta)
    if return_masks:
        return seq, masks
    return seq


# -- corruptions --------------------------------------------------------------

def elastic_displacement(shape, alpha, sigma, rng):
    """Displacement field (2, H, W) in pixels: unit uniform noise, Gaussian
    filtered (truncated at 3 sigma, reflected borders) and scaled by alpha."""
    h, w = shape
    noise = rng.uniform(-1.0, 1.0, size=(2, h, w))
    if alpha == 0:
        return np.zeros((2, h, w))
    field_ = np.stack([ndimage.gaussian_filter(n, sigma, truncate=3.0, mode="reflect")
                       for n in noise])
    return alpha * field_


def warp_bilinear(frame, disp):
    """Sample ``frame`` (C, H, W) at (y + dy, x + dx); coordinates clamp at borders."""
    c, h, w = frame.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    coords = np.stack([yy + disp[0], xx + disp[1]])
    return np.stack([ndimage.map_coordinates(frame[ch], coords, order=1, mode="nearest")
                     for ch in range(c)])


def elastic_warp(frame, alpha=50.0, sigma=5.0, seed=0, t=0):
    """Elastic deformation of one (C, H, W) frame; alpha=0 is the identity."""
    if alpha < 0 or sigma <= 0:
        raise ValueError("elastic_warp: need alpha >= 0 and sigma > 0")
    frame = np.asarray(frame, dtype=np.float64)
    if alpha == 0:
        return frame.copy()
    rng = frame_rng(seed, t, _KIND_SALT["elastic"])
    disp = elastic_displacement(frame.shape[1:], alpha, sigma, rng)
    return warp_bilinear(frame, disp)


def corrupt_frame(frame, spec, t):
    """Apply ``spec`` to frame ``t``; pure in (frame, spec, t)."""
    p = spec.params
    kind = spec.kind
    if kind == "identity":
        return frame.copy()
    if kind == "elastic":
        return elastic_warp(frame, p["alpha"], p["sigma"], spec.seed, t)
    rng = frame_rng(spec.seed, t, _KIND_SALT[kind])
    if kind == "gaussian_noise":
        return frame + p["sigma"] * rng.standard_normal(frame.shape)
    if kind == "impulse":
        u = rng.random(frame.shape)
        out = frame.copy()
        out[u < p["p_salt"]] = 1.0
        out[(u >= p["p_salt"]) & (u < p["p_salt"] + p["p_pepper"])] = 0.0
        return out
    if kind == "frame_drop":
        return np.zeros_like(frame) if rng.random() < p["p"] else frame.copy()
    if kind == "patch_drop":
        s = int(p["patch"])
        c, h, w = frame.shape
        gh, gw = -(-h // s), -(-w // s)
        drop = rng.random((gh, gw)) < p["p"]
        keep = ~np.kron(drop, np.ones((s, s), dtype=bool))[:h, :w]
        return frame * keep[None]
    raise AssertionError(kind)


def order_corruptions(specs):
    """Gaussian noise first, the rest in their given order."""
    specs = list(specs)
    return [s for s in specs if s.kind == "gaussian_noise"] + \
           [s for s in specs if s.kind != "gaussian_noise"]


def corrupt(seq, specs):
    """Corrupted copy of ``seq``; targets are left untouched.

    ``specs`` may be one :class:`CorruptionSpec` or a list of them. Gaussian
    noise is applied before any other corruption, so e.g. a dropped frame is
    all zeros rather than pure noise.
    """
    if isinstance(specs, CorruptionSpec):
        specs = [specs]
    specs = order_corruptions(specs)
    frames = seq.frames.copy()
    for spec in specs:
        for t in range(seq.tau):
            frames[t] = corrupt_frame(frames[t], spec, t)
    meta = dict(seq.meta)
    meta["corruptions"] = [s.to_dict() for s in specs]
    return VideoSequence(frames, seq.targets.copy(), seq.fps_hint, meta)
