"""Training loops: frame-wise base training and stabilizer training with the
unified loss by backpropagation through time over short snippets."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds
from .autodiff import Adam, backward, no_grad, ops, reset_tape, step_lr
from .metrics import L2_MEAN, Metric, corruption_robustness_error, instability, mean_psnr, unified_loss
from .models import build_model, is_frozen, parameter_hash
from .signals import CorruptionSpec, corrupt
from .models import task_sequence
from .stabilizers import StabilizedModel, attach


class BetweenBoundsWarning(UserWarning):
    """lam lies between the oracle and collapse bounds; no guarantee applies."""


class TrainingDiverged(FloatingPointError):
    """A loss became non-finite during training."""


@dataclass
class TrainConfig:
    """Optimization settings shared by base and stabilizer training.

    ``lr_drops`` lists epochs (0-based) at whose start the learning rate is
    multiplied by 0.1.
    """

    lam: float = 0.2
    tau_train: int = 8
    epochs: int = 5
    steps_per_epoch: int = 200
    lr: float = 1e-3
    lr_drops: tuple = (3, 4)
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    metric: str = "l2"
    reduction: str = "sum"
    accumulate: int = 1
    joint: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.tau_train < 2:
            raise ValueError(f"tau_train must be >= 2, got {self.tau_train}")
        if self.accumulate < 1:
            raise ValueError("accumulate must be >= 1")
        self.lr_drops = tuple(self.lr_drops)
        self.betas = tuple(self.betas)
        Metric(self.metric, self.reduction)
        if bounds.regime(self.lam, self.tau_train) == "between":
            warnings.warn(f"lam={self.lam} is between the oracle bound 1/2 and the collapse bound "
                          f"tau_train-1={self.tau_train - 1}; behaviour is not guaranteed",
                          BetweenBoundsWarning, stacklevel=2)

    @property
    def delta(self):
        return Metric(self.metric, self.reduction)

    def lr_at(self, epoch):
        return step_lr(self.lr, epoch, self.lr_drops)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainLog:
    """Per-epoch rows: loss decomposition and validation metrics."""

    rows: list = field(default_factory=list)
    checkpoint: str | None = None
    seconds: float = 0.0

    def add(self, **row):
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("log rows must be added in increasing epoch order")
        self.rows.append(row)

    @property
    def final(self):
        return self.rows[-1] if self.rows else {}

    def to_dict(self):
        return {"rows": self.rows, "checkpoint": self.checkpoint, "seconds": self.seconds}


# -- data -------------------------------------------------------------------------------

DEFAULT_TASK_CORRUPTION = {"denoise": [CorruptionSpec("gaussian_noise", {"sigma": 0.1})],
                           "enhance": []}


@dataclass
class DataConfig:
    task: str = "denoise"
    n_train: int = 6
    n_val: int = 3
    tau: int = 24
    shape: tuple = (1, 24, 24)
    motion_model: str = "translating_shapes"
    speed: int = 1
    seed: int = 0
    corruptions: list | None = None  # None: the task's default (noise for denoising)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.corruptions is not None:
            self.corruptions = [c if isinstance(c, CorruptionSpec) else
                                (CorruptionSpec.parse(c) if isinstance(c, str) else CorruptionSpec.from_dict(c))
                                for c in self.corruptions]

    def to_dict(self):
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["corruptions"] = None if self.corruptions is None else [c.to_dict() for c in self.corruptions]
        return d


class Dataset:
    """Clean synthetic sequences with targets plus the input corruptions.

    Training snippets get fresh corruption seeds drawn from the caller's
    generator; validation sequences use fixed seeds so evaluations are
    comparable across models.
    """

    def __init__(self, config):
        self.config = config
        c = config
        self.corruptions = list(DEFAULT_TASK_CORRUPTION[c.task] if c.corruptions is None
                                else c.corruptions)
        ss = np.random.SeedSequence(c.seed)
        train_seeds, val_seeds = ss.spawn(2)
        tr = train_seeds.generate_state(c.n_train)
        va = val_seeds.generate_state(c.n_val)
        self.train = [task_sequence(c.task, int(s), c.tau, c.shape, c.motion_model, c.speed) for s in tr]
        self.val = [task_sequence(c.task, int(s), c.tau, c.shape, c.motion_model, c.speed) for s in va]

    def inputs(self, seq, seed, extra=()):
        specs = [s.with_seed(seed + i) for i, s in enumerate(list(self.corruptions) + list(extra))]
        return corrupt(seq, specs).frames if specs else seq.frames

    def sample_snippet(self, rng, length):
        seq = self.train[int(rng.integers(len(self.train)))]
        if length > seq.tau:
            raise ValueError(f"snippet length {length} exceeds sequence length {seq.tau}")
        start = int(rng.integers(seq.tau - length + 1))
        snip = seq.snippet(start, length)
        return self.inputs(snip, int(rng.integers(2 ** 31))), snip.targets

    def validation(self, extra=()):
        """(inputs, targets) for each validation sequence under fixed seeds."""
        out = []
        for i, seq in enumerate(self.val):
            out.append((self.inputs(seq, 1_000_003 * (i + 1), extra), seq.targets))
        return out


# -- prediction & evaluation -------------------------------------------------------------

def predict(model, frames):
    """Numpy predictions for a (tau, C, H, W) stack; stabilized models are reset first."""
    with no_grad():
        if isinstance(model, StabilizedModel):
            model.reset()
            return np.stack([model.step(f).data for f in frames])
        return np.stack([model(f).data for f in frames])


@dataclass
class EvalReport:
    per_sequence: list
    psnr: float
    instability: float
    robustness_error: float
    corruption: list

    def to_dict(self):
        return asdict(self)


def evaluate(model, dataset, corruption=None, sequences=None):
    """PSNR, instability (mean L2 over consecutive pairs) and robustness
    error (mean L2 to the targets) on validation data.

    ``corruption`` (spec or list) is applied on top of the dataset's own
    input corruption; the instability then is the corruption instability.
    """
    extra = [] if corruption is None else ([corruption] if isinstance(corruption, CorruptionSpec)
                                           else list(corruption))
    pairs = dataset.validation(extra) if sequences is None else sequences
    rows = []
    for inputs, targets in pairs:
        preds = predict(model, inputs)
        rows.append({"psnr": mean_psnr(preds, targets),
                     "instability": instability(preds, L2_MEAN),
                     "robustness_error": corruption_robustness_error(preds, targets, L2_MEAN)})
    agg = {k: float(np.mean([r[k] for r in rows])) for k in ("psnr", "instability", "robustness_error")}
    return EvalReport(rows, agg["psnr"], agg["instability"], agg["robustness_error"],
                      [c.to_dict() for c in dataset.corruptions + extra])


# -- training ---------------------------------------------------------------------------

def _check_finite(value, epoch, step, what):
    if not math.isfinite(value):
        raise TrainingDiverged(f"{what} became {value} at epoch {epoch}, step {step}; "
                               "lower the learning rate or check the inputs")


def train_base(model, dataset, config):
    """Per-frame MSE training of an unfrozen model. Returns ``(model, log)``."""
    if is_frozen(model) or any(p.frozen for p in model.params.values()):
        raise ValueError("train_base needs an unfrozen model")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params.values(), config.lr, config.betas, config.eps)
    log = TrainLog()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        losses = []
        for step in range(config.steps_per_epoch):
            inputs, targets = dataset.sample_snippet(rng, config.tau_train)
            reset_tape()
            opt.zero_grad()
            total = None
            for x, y in zip(inputs, targets):
                l = ops.sq_err(model(x), y)
                total = l if total is None else total + l
            total = total * (1.0 / len(inputs))
            _check_finite(total.item(), epoch, step, "MSE loss")
            backward(total)
            opt.step()
            losses.append(total.item())
        rep = evaluate(model, dataset)
        log.add(epoch=epoch, lr=opt.lr, loss=float(np.mean(losses)), val_psnr=rep.psnr,
                val_instability=rep.instability)
    log.seconds = time.perf_counter() - t0
    return model, log


def snippet_loss(stabilized, inputs, targets, config):
    """Reset, run the snippet and return the unified loss report."""
    stabilized.reset()
    outs = [stabilized.step(x) for x in inputs]
    return unified_loss(outs, list(targets), config.lam, config.delta)


def train_stabilizer(stabilized, dataset, config, corruption=None):
    """Train the stabilizer parameters with the unified loss via BPTT.

    The state is reset at every snippet start. The base parameters must be
    frozen unless ``config.joint``; their hash is checked after training.
    ``corruption`` adds training-time corruptions on top of the dataset's.

    Returns ``(stabilized, log)``.
    """
    if config.lam < 0:
        raise ValueError(f"lam must be >= 0, got {config.lam}")
    if not config.joint and not is_frozen(stabilized.base):
        raise ValueError("base model must be frozen for adapter training (or set joint=True)")
    extra = [] if corruption is None else ([corruption] if isinstance(corruption, CorruptionSpec)
                                           else list(corruption))
    params = stabilized.all_parameters() if config.joint else stabilized.parameters()
    if config.joint:
        for p in stabilized.base.params.values():
            p.frozen, p.requires_grad = False, True
    if not params:
        raise ValueError("stabilized model has no trainable parameters")
    base_hash = parameter_hash(stabilized.base)
    rng = np.random.default_rng(config.seed)
    opt = Adam(params.values(), config.lr, config.betas, config.eps)
    log = TrainLog()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        acc_terms, stab_terms, totals = [], [], []
        for step in range(config.steps_per_epoch):
            opt.zero_grad()
            for _ in range(config.accumulate):
                seq_inputs, targets = _training_snippet(dataset, rng, config.tau_train, extra)
                reset_tape()
                rep = snippet_loss(stabilized, seq_inputs, targets, config)
                _check_finite(rep.total, epoch, step, "unified loss")
                loss = rep.loss if config.accumulate == 1 else rep.loss * (1.0 / config.accumulate)
                backward(loss)
                acc_terms.append(rep.accuracy_term)
                stab_terms.append(rep.stability_term)
                totals.append(rep.total)
            opt.step()
        val = evaluate(stabilized, dataset, extra or None)
        log.add(epoch=epoch, lr=opt.lr, accuracy_term=float(np.mean(acc_terms)),
                stability_term=float(np.mean(stab_terms)), loss=float(np.mean(totals)),
                val_psnr=val.psnr, val_instability=val.instability,
                val_robustness_error=val.robustness_error)
    if not config.joint and parameter_hash(stabilized.base) != base_hash:
        raise RuntimeError("base parameters changed during adapter training")
    log.seconds = time.perf_counter() - t0
    return stabilized, log


def _training_snippet(dataset, rng, length, extra):
    if not extra:
        return dataset.sample_snippet(rng, length)
    seq = dataset.train[int(rng.integers(len(dataset.train)))]
    start = int(rng.integers(seq.tau - length + 1))
    snip = seq.snippet(start, length)
    return dataset.inputs(snip, int(rng.integers(2 ** 31)), extra), snip.targets


# -- experiments and sweeps ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run; mirrors the JSON config file."""

    task: str = "denoise"
    model: dict = field(default_factory=lambda: {"kind": "denoiser", "width": 8, "seed": 0})
    stabilizer: dict = field(default_factory=lambda: {"kind": "controlled", "layers": ["output"]})
    corruption: list = field(default_factory=list)  # extra training/eval corruptions
    lam: float = 0.2
    tau: int = 8
    schedule: dict = field(default_factory=dict)  # epochs, steps_per_epoch, lr, lr_drops
    base_schedule: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def data_config(self):
        return DataConfig(task=self.task, **self.data)

    def train_config(self, seed=None, lam=None):
        return TrainConfig(lam=self.lam if lam is None else lam, tau_train=self.tau,
                           seed=self.seed if seed is None else seed, **self.schedule)

    def base_config(self):
        sched = {"epochs": 2, "steps_per_epoch": 150, "lr": 3e-3, "lr_drops": (1,)}
        sched.update(self.base_schedule)
        return TrainConfig(lam=0.0, tau_train=self.tau, seed=self.seed, **sched)

    def corruption_specs(self):
        return [c if isinstance(c, CorruptionSpec) else
                (CorruptionSpec.parse(c) if isinstance(c, str) else CorruptionSpec.from_dict(c))
                for c in self.corruption]

    def attach(self, base, seed=None):
        opts = dict(self.stabilizer)
        kind = opts.pop("kind")
        layers = opts.pop("layers", "output")
        opts.setdefault("seed", self.seed if seed is None else seed)
        return attach(base, layers, kind, **opts)


def prepare_base(config, dataset=None):
    """Build and train the base model described by ``config``."""
    dataset = dataset or Dataset(config.data_config())
    model = build_model(config.model)
    model, log = train_base(model, dataset, config.base_config())
    return model, log


def run_experiment(config, base=None, dataset=None, seed=None, lam=None):
    """Train one stabilizer on a frozen copy of ``base`` and evaluate both.

    Returns a dict with the training log and base/stabilized reports.
    """
    from .models import freeze
    dataset = dataset or Dataset(config.data_config())
    if base is None:
        base, _ = prepare_base(config, dataset)
    base = _copy_model(base)
    freeze(base)
    extra = config.corruption_specs()
    base_report = evaluate(base, dataset, extra or None)
    stab = config.attach(base, seed)
    stab, log = train_stabilizer(stab, dataset, config.train_config(seed, lam), extra or None)
    report = evaluate(stab, dataset, extra or None)
    return {"lam": config.lam if lam is None else lam, "log": log, "base": base_report,
            "stabilized": report, "model": stab}


def _copy_model(model):
    clone = build_model(model.config())
    for k, p in model.params.items():
        clone.params[k].data = p.data.copy()
    return clone


def _sweep_worker(args):
    cfg_dict, base_cfg, base_params, lam, seed = args
    config = ExperimentConfig.from_dict(cfg_dict)
    base = build_model(base_cfg)
    for k, v in base_params.items():
        base.params[k].data = v
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BetweenBoundsWarning)
        res = run_experiment(config, base, seed=seed, lam=lam)
    return {"lam": lam, "seed": seed, "psnr": res["stabilized"].psnr,
            "instability": res["stabilized"].instability,
            "robustness_error": res["stabilized"].robustness_error,
            "base_psnr": res["base"].psnr, "base_instability": res["base"].instability}


@dataclass
class SweepResult:
    rows: list
    monotone: bool  # instability non-increasing in lam

    def to_dict(self):
        return {"rows": self.rows, "monotone": self.monotone}


def sweep(config, lam_values, base=None, workers=1):
    """One training per ``lam``; seeds are spawned from ``config.seed``.

    The returned rows form the accuracy/stability frontier. ``monotone``
    reports (without asserting) whether instability falls as lam grows.
    """
    lam_values = list(lam_values)
    if not lam_values:
        raise ValueError("lam_values must be non-empty")
    if base is None:
        base, _ = prepare_base(config)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(len(lam_values))]
    params = {k: p.data.copy() for k, p in base.params.items()}
    jobs = [(config.to_dict(), base.config(), params, float(l), s) for l, s in zip(lam_values, seeds)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]
    order = np.argsort([r["lam"] for r in rows], kind="stable")
    inst = [rows[i]["instability"] for i in order]
    monotone = all(b <= a + 1e-12 for a, b in zip(inst, inst[1:]))
    return SweepResult(rows, monotone)
