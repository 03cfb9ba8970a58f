import warnings

import numpy as np
import pytest

from tempstab.metrics import instability, psnr
from tempstab.models import ToyDenoiser, freeze, parameter_hash
from tempstab.signals import CorruptionSpec
from tempstab.stabilizers import attach
from tempstab.trainer import (BetweenBoundsWarning, DataConfig, Dataset, ExperimentConfig,
                              TrainConfig, TrainLog, TrainingDiverged, evaluate, predict,
                              run_experiment, snippet_loss, sweep, train_base, train_stabilizer)

QUICK = dict(epochs=1, steps_per_epoch=5, lr=1e-2, lr_drops=())


@pytest.fixture(scope="module")
def denoise_data():
    return Dataset(DataConfig(n_train=3, n_val=2, tau=12, shape=(1, 16, 16)))


@pytest.fixture(scope="module")
def trained_base():
    ds = Dataset(DataConfig())
    model, log = train_base(ToyDenoiser(seed=0), ds,
                            TrainConfig(lam=0, epochs=3, steps_per_epoch=200, lr=3e-3, lr_drops=(2,)))
    return ds, model, log


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(tau_train=1)
    with pytest.raises(ValueError):
        TrainConfig(metric="linf")
    with pytest.warns(BetweenBoundsWarning):
        TrainConfig(lam=0.8, tau_train=8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        TrainConfig(lam=0.4)
        TrainConfig(lam=8.0, tau_train=8)
    cfg = TrainConfig(lr=1.0, lr_drops=(1, 3))
    assert [cfg.lr_at(e) for e in range(4)] == pytest.approx([1.0, 0.1, 0.1, 0.01])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_log_rows_monotone():
    log = TrainLog()
    log.add(epoch=0, loss=1.0)
    log.add(epoch=1, loss=0.5)
    with pytest.raises(ValueError):
        log.add(epoch=1, loss=0.4)


def test_zero_noise_identity_target_loss_vanishes():
    ds = Dataset(DataConfig(corruptions=[], n_train=2, n_val=1, tau=10, shape=(1, 16, 16)))
    _, log = train_base(ToyDenoiser(seed=1), ds,
                        TrainConfig(lam=0, epochs=1, steps_per_epoch=100, lr=3e-3, lr_drops=()))
    assert log.final["loss"] < 1e-3
    assert log.final["val_psnr"] > 40


def test_train_base_deterministic(denoise_data):
    cfg = TrainConfig(lam=0, **QUICK)
    a, la = train_base(ToyDenoiser(seed=2), denoise_data, cfg)
    b, lb = train_base(ToyDenoiser(seed=2), denoise_data, cfg)
    assert parameter_hash(a) == parameter_hash(b)
    assert la.rows == lb.rows


def test_trained_denoiser_beats_noisy_input(trained_base):
    ds, model, _ = trained_base
    noisy = np.mean([np.mean([psnr(x, y) for x, y in zip(i, t)]) for i, t in ds.validation()])
    assert noisy == pytest.approx(20.0, abs=0.3)  # sigma = 0.1 on a unit peak
    assert evaluate(model, ds).psnr >= noisy + 2.0


def test_train_base_rejects_frozen_and_nan(denoise_data):
    with pytest.raises(ValueError):
        train_base(freeze(ToyDenoiser()), denoise_data, TrainConfig(lam=0, **QUICK))
    bad = ToyDenoiser()
    bad.params["b3"].data[:] = np.nan
    with pytest.raises(TrainingDiverged):
        train_base(bad, denoise_data, TrainConfig(lam=0, **QUICK))


def test_stabilizer_training_keeps_base_and_moves_adapter(trained_base):
    ds, model, _ = trained_base
    base = ToyDenoiser(seed=0)
    for k, p in model.params.items():
        base.params[k].data = p.data.copy()
    h = parameter_hash(base)
    stab = attach(base, "output", "controlled")
    before = {k: p.data.copy() for k, p in stab.parameters().items()}
    train_stabilizer(stab, ds, TrainConfig(lam=0.2, epochs=1, steps_per_epoch=1, lr=1e-2))
    assert parameter_hash(base) == h
    assert any(not np.array_equal(before[k], p.data) for k, p in stab.parameters().items())


def test_train_stabilizer_rejects(denoise_data):
    stab = attach(ToyDenoiser(), "output", "ema_learned")
    cfg = TrainConfig(lam=0.2, **QUICK)
    object.__setattr__(cfg, "lam", -1.0)
    with pytest.raises(ValueError):
        train_stabilizer(stab, denoise_data, cfg)
    unfrozen = attach(ToyDenoiser(), "output", "ema_learned", joint=True)
    with pytest.raises(ValueError):
        train_stabilizer(unfrozen, denoise_data, TrainConfig(lam=0.2, **QUICK))
    fixed = attach(ToyDenoiser(), "output", "ema_fixed", beta=0.5)
    with pytest.raises(ValueError):
        train_stabilizer(fixed, denoise_data, TrainConfig(lam=0.2, **QUICK))


def test_joint_training_updates_base(denoise_data):
    stab = attach(ToyDenoiser(seed=3), "output", "ema_learned", joint=True)
    h = parameter_hash(stab.base)
    train_stabilizer(stab, denoise_data, TrainConfig(lam=0.2, joint=True, **QUICK))
    assert parameter_hash(stab.base) != h


def test_stabilizer_training_deterministic(denoise_data):
    def run():
        stab = attach(ToyDenoiser(seed=4), "output", "spatial", seed=1)
        _, log = train_stabilizer(stab, denoise_data, TrainConfig(lam=0.3, seed=9, **QUICK))
        return log.rows, {k: p.data.copy() for k, p in stab.parameters().items()}
    (ra, pa), (rb, pb) = run(), run()
    assert ra == rb
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_snippet_state_does_not_leak(denoise_data):
    stab = attach(ToyDenoiser(seed=5), "all", "controlled")
    rng = np.random.default_rng(0)
    x, y = denoise_data.sample_snippet(rng, 6)
    other, _ = denoise_data.sample_snippet(rng, 6)
    cfg = TrainConfig(lam=0.2)
    a = snippet_loss(stab, x, y, cfg).total
    snippet_loss(stab, other, y, cfg)
    assert snippet_loss(stab, x, y, cfg).total == a


def test_lam_zero_static_scene_keeps_beta_near_init():
    ds = Dataset(DataConfig(motion_model="static", corruptions=[], n_train=2, n_val=1, tau=10,
                            shape=(1, 12, 12)))
    stab = attach(ToyDenoiser(zero=True), "output", "ema_learned", v=4.0)
    train_stabilizer(stab, ds, TrainConfig(lam=0.0, epochs=1, steps_per_epoch=20, lr=1e-2, lr_drops=()))
    (logits,) = stab.parameters().values()
    np.testing.assert_allclose(logits.data, 4.0, atol=1e-9)


def test_evaluate_static_base_is_stable():
    ds = Dataset(DataConfig(motion_model="static", corruptions=[], n_train=1, n_val=2, tau=6,
                            shape=(1, 12, 12)))
    rep = evaluate(ToyDenoiser(seed=1), ds)
    assert rep.instability == 0.0
    assert len(rep.per_sequence) == 2


def test_evaluate_with_corruption_is_corruption_instability(denoise_data):
    model = ToyDenoiser(seed=0)
    fd = CorruptionSpec("frame_drop", {"p": 0.5})
    rep = evaluate(model, denoise_data, fd)
    assert [c["kind"] for c in rep.corruption] == ["gaussian_noise", "frame_drop"]
    preds = [predict(model, i) for i, _ in denoise_data.validation([fd])]
    assert rep.instability == pytest.approx(np.mean([instability(list(p)) for p in preds]))


def test_validation_inputs_fixed(denoise_data):
    a = denoise_data.validation()
    b = denoise_data.validation()
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(a, b))


def test_experiment_config_roundtrip():
    cfg = ExperimentConfig(lam=0.4, stabilizer={"kind": "spatial", "layers": ["output"], "k": 3})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"lamda": 1})


def test_sweep_small():
    cfg = ExperimentConfig(
        task="denoise", stabilizer={"kind": "ema_learned", "layers": "output"},
        schedule=dict(epochs=1, steps_per_epoch=3, lr=1e-2, lr_drops=()),
        base_schedule=dict(epochs=1, steps_per_epoch=3),
        data=dict(n_train=2, n_val=1, tau=10, shape=(1, 12, 12)))
    res = sweep(cfg, [0.1, 8.0])
    assert [r["lam"] for r in res.rows] == [0.1, 8.0]
    assert isinstance(res.monotone, bool)
    assert res.rows[0]["seed"] != res.rows[1]["seed"]
    again = sweep(cfg, [0.1, 8.0])
    assert again.rows == res.rows
    with pytest.raises(ValueError):
        sweep(cfg, [])


def test_run_experiment_reports(denoise_data):
    cfg = ExperimentConfig(stabilizer={"kind": "controlled", "layers": "output"},
                           schedule=dict(epochs=1, steps_per_epoch=2, lr=1e-2, lr_drops=()))
    res = run_experiment(cfg, base=ToyDenoiser(seed=1), dataset=denoise_data)
    assert set(res) >= {"log", "base", "stabilized", "model"}
    assert res["log"].rows[0]["epoch"] == 0
