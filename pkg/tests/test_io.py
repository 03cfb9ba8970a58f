import json

import numpy as np
import pytest

from tempstab import io
from tempstab.bounds import figure_instance, landscape_grid
from tempstab.models import ToyDenoiser, ToyEnhancer, parameter_hash
from tempstab.signals import CorruptionSpec, corrupt, generate_sequence
from tempstab.stabilizers import attach


def test_blob_is_raw_little_endian_float64(tmp_path, rng):
    arrays = {"a": rng.standard_normal((2, 3)), "b": np.arange(4.0)}
    manifest = io.save_arrays(tmp_path / "x", arrays, "array", note="hi")
    meta = json.loads(manifest.read_text())
    assert meta["dtype"] == "<f8" and meta["format"] == "tempstab-array" and meta["note"] == "hi"
    raw = (tmp_path / meta["blob"]).read_bytes()
    for name, arr in arrays.items():
        e = meta["arrays"][name]
        got = np.frombuffer(raw, "<f8", count=arr.size, offset=e["offset"]).reshape(e["shape"])
        assert np.array_equal(got, arr)
    _, back = io.load_arrays(manifest, "array")
    assert all(np.array_equal(back[k], v) for k, v in arrays.items())


def test_manifest_checks(tmp_path):
    m = io.save_array(tmp_path / "x", np.ones(3))
    with pytest.raises(ValueError, match="sequence"):
        io.load_arrays(m, "sequence")
    meta = json.loads(m.read_text())
    meta["arrays"]["data"]["shape"] = [10]
    m.write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="too short"):
        io.load_array(m)


def test_npy_accepted(tmp_path):
    np.save(tmp_path / "a.npy", np.eye(2))
    assert np.array_equal(io.load_array(tmp_path / "a.npy"), np.eye(2))


def test_sequence_roundtrip(tmp_path):
    seq = corrupt(generate_sequence(2, 5, (2, 8, 6)), CorruptionSpec("impulse", seed=3))
    back = io.load_sequence(io.save_sequence(seq, tmp_path / "seq.json"))
    assert np.array_equal(back.frames, seq.frames) and np.array_equal(back.targets, seq.targets)
    assert back.meta["corruptions"][0]["kind"] == "impulse"


def test_model_roundtrip(tmp_path):
    for m in (ToyDenoiser(seed=4), ToyEnhancer(channels=3, seed=1)):
        path = io.save_model(m, tmp_path / m.kind)
        back = io.load_model(path)
        assert parameter_hash(back) == parameter_hash(m)
        assert back.config() == m.config()


@pytest.mark.parametrize("kind", ["ema_learned", "controlled", "spatial"])
def test_stabilizer_roundtrip(kind, tmp_path, rng):
    base = ToyDenoiser(seed=1)
    bpath = io.save_model(base, tmp_path / "base")
    stab = attach(base, "conv2,output", kind, seed=3)
    for p in stab.parameters().values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    spath = io.save_stabilizer(stab, tmp_path / "stab", base_checkpoint=bpath)
    back = io.load_stabilizer(spath)
    assert set(back.parameters()) == set(stab.parameters())
    xs = rng.random((4, 1, 8, 8))
    a = [o.data for o in stab.run(xs)]
    b = [o.data for o in back.run(xs)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_stabilizer_refuses_other_base(tmp_path):
    stab = attach(ToyDenoiser(seed=1), "output", "controlled")
    spath = io.save_stabilizer(stab, tmp_path / "stab")
    with pytest.raises(ValueError, match="differ"):
        io.load_stabilizer(spath, base=ToyDenoiser(seed=2))
    with pytest.raises(ValueError, match="no base"):
        io.load_stabilizer(spath)


def test_json_and_csv(tmp_path):
    p = io.write_json({"a": np.float64(1.5), "b": float("inf"), "c": np.arange(2)}, tmp_path / "r.json")
    assert io.read_json(p) == {"a": 1.5, "b": "inf", "c": [0, 1]}
    rows = [{"lam": 0.1, "psnr": 20.0}, {"lam": 0.2, "extra": 1}]
    io.write_csv(rows, tmp_path / "r.csv")
    back = io.read_csv(tmp_path / "r.csv")
    assert list(back[0]) == ["lam", "psnr", "extra"] and back[1]["psnr"] == ""


def test_matrix_csv_and_landscape_plot(tmp_path):
    from tempstab import plotting
    land = landscape_grid(figure_instance(), 0.4, res=0.05)
    io.write_matrix_csv(land.u, tmp_path / "u.csv", land.p3, land.p2)
    data = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1:], land.u)
    svg = plotting.plot_landscape(land, tmp_path / "u.svg", [0, 1, 0.5]).read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_other_plots(tmp_path):
    from tempstab import plotting
    rows = [{"lam": 0.1, "psnr": 25.0, "instability": 2.0}, {"lam": 8.0, "psnr": 20.0, "instability": 0.0}]
    assert "<svg" in plotting.plot_frontier(rows, tmp_path / "f.svg", rows[0]).read_text()
    log = [{"epoch": 0, "loss": 1.0, "val_psnr": 20.0}, {"epoch": 1, "loss": 0.5, "val_psnr": 21.0}]
    assert "<svg" in plotting.plot_training(log, tmp_path / "t.svg").read_text()
    assert "<svg" in plotting.plot_frames(np.zeros((3, 1, 4, 4)), tmp_path / "fr.svg").read_text()
