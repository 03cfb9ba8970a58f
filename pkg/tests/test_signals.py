import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempstab.metrics import instability
from tempstab.signals import (CorruptionSpec, VideoSequence, corrupt, corrupt_frame,
                              elastic_displacement, elastic_warp, frame_rng, generate_sequence,
                              _KIND_SALT)


def test_static_sequence_is_constant():
    seq = generate_sequence(3, 6, (1, 16, 16), "static")
    assert all(np.array_equal(f, seq.frames[0]) for f in seq.frames)
    assert instability(list(seq.frames)) == 0.0


def test_translating_shapes_shift_one_pixel_inside_support():
    seq, masks = generate_sequence(7, 5, (1, 20, 20), "translating_shapes", speed=1,
                                   return_masks=True)
    vel = seq.meta["velocities"]
    n = masks.shape[1]
    checked = 0
    for t in range(seq.tau - 1):
        for i in range(n):
            # pixels of object i not painted over by later objects, at both times
            vis_t = masks[t, i] & ~masks[t, i + 1:].any(0)
            vis_n = masks[t + 1, i] & ~masks[t + 1, i + 1:].any(0)
            vy, vx = vel[i]
            assert abs(vy) + abs(vx) == 1
            src = np.roll(vis_t, (vy, vx), axis=(0, 1))
            both = vis_n & src
            shifted = np.roll(seq.frames[t], (vy, vx), axis=(1, 2))
            np.testing.assert_array_equal(seq.frames[t + 1][:, both], shifted[:, both])
            checked += both.sum()
    assert checked > 50


def test_same_seed_bit_identical():
    for model in ("static", "translating_shapes", "oscillating_texture"):
        a = generate_sequence(11, 4, (2, 12, 10), model)
        b = generate_sequence(11, 4, (2, 12, 10), model)
        assert np.array_equal(a.frames, b.frames)
        assert a.frames.min() >= 0 and a.frames.max() <= 1


def test_oscillating_texture_moves():
    seq = generate_sequence(1, 8, (1, 16, 16), "oscillating_texture")
    assert instability(list(seq.frames)) > 0


@pytest.mark.parametrize("bad", [dict(tau=0), dict(shape=(1, 0, 8)), dict(motion_model="spin")])
def test_generate_rejects(bad):
    args = dict(scene_seed=0, tau=3, shape=(1, 8, 8), motion_model="static")
    args.update(bad)
    with pytest.raises(ValueError):
        generate_sequence(**args)


def test_sequence_invariants():
    with pytest.raises(ValueError):
        VideoSequence(np.zeros((3, 1, 4, 4)), np.zeros((2, 1, 4, 4)))
    with pytest.raises(ValueError):
        VideoSequence(np.zeros((0, 1, 4, 4)), np.zeros((0, 1, 4, 4)))


# -- corruptions ---------------------------------------------------------------------

def _seq(tau=6, shape=(1, 16, 16), seed=0):
    return generate_sequence(seed, tau, shape, "translating_shapes")


def test_identity_corruption_is_bit_exact():
    seq = _seq()
    out = corrupt(seq, CorruptionSpec("identity"))
    assert np.array_equal(out.frames, seq.frames)
    assert np.array_equal(out.targets, seq.targets)


def test_patch_drop_fraction():
    spec = CorruptionSpec("patch_drop", {"patch": 8, "p": 0.1}, seed=5)
    frame = np.ones((1, 80, 80))  # 100 patches per frame
    dropped = []
    for t in range(100):
        out = corrupt_frame(frame, spec, t)[0]
        dropped.extend((out[::8, ::8] == 0).ravel())
    assert len(dropped) == 10_000
    assert 0.09 <= np.mean(dropped) <= 0.11


def test_patch_drop_ceiling_tiling():
    spec = CorruptionSpec("patch_drop", {"patch": 8, "p": 1.0})
    assert np.all(corrupt_frame(np.ones((1, 10, 13)), spec, 0) == 0)


def test_frame_drop_after_noise_is_all_zero():
    seq = _seq(tau=40)
    specs = [CorruptionSpec("frame_drop", {"p": 0.3}, seed=1),
             CorruptionSpec("gaussian_noise", {"sigma": 0.1}, seed=2)]
    out = corrupt(seq, specs)
    assert [s["kind"] for s in out.meta["corruptions"]] == ["gaussian_noise", "frame_drop"]
    zero = [t for t in range(seq.tau) if np.all(out.frames[t] == 0)]
    assert 0 < len(zero) < seq.tau
    for t in set(range(seq.tau)) - set(zero):
        assert np.abs(out.frames[t] - seq.frames[t]).max() > 0


def test_gaussian_noise_variance():
    spec = CorruptionSpec("gaussian_noise", {"sigma": 0.2}, seed=3)
    frame = np.full((1, 100, 100), 0.5)
    samples = np.concatenate([(corrupt_frame(frame, spec, t) - frame).ravel() for t in range(10)])
    assert samples.size == 100_000
    assert abs(samples.var() / 0.04 - 1) < 0.05


def test_impulse_probabilities():
    spec = CorruptionSpec("impulse", {"p_salt": 0.1, "p_pepper": 0.2}, seed=0)
    out = corrupt_frame(np.full((1, 200, 200), 0.5), spec, 0)
    assert abs((out == 1).mean() - 0.1) < 0.01
    assert abs((out == 0).mean() - 0.2) < 0.01


def test_corrupt_is_pure_and_order_independent():
    seq = _seq()
    spec = CorruptionSpec("impulse", seed=4)
    a, b = corrupt(seq, spec), corrupt(seq, spec)
    assert np.array_equal(a.frames, b.frames)
    # a frame's draw depends only on (seed, t), not on the other frames
    assert np.array_equal(corrupt_frame(seq.frames[3], spec, 3), a.frames[3])
    assert not np.array_equal(a.frames[3], corrupt_frame(seq.frames[3], spec, 2))


def test_elastic_identity_and_constant():
    frame = np.random.default_rng(0).random((2, 16, 16))
    assert np.array_equal(elastic_warp(frame, alpha=0.0, sigma=5.0, seed=1), frame)
    const = np.full((1, 16, 16), 0.3)
    np.testing.assert_allclose(elastic_warp(const, 50.0, 5.0, seed=2), 0.3, atol=1e-15)


def _reference_field(h, w, alpha, sigma, seed, t):
    """Displacement built from the same noise with an explicit truncated
    Gaussian kernel and reflected borders, filtered one axis at a time."""
    noise = frame_rng(seed, t, _KIND_SALT["elastic"]).uniform(-1.0, 1.0, size=(2, h, w))
    r = int(3.0 * sigma + 0.5)
    taps = np.arange(-r, r + 1)
    kern = np.exp(-0.5 * (taps / sigma) ** 2)
    kern /= kern.sum()
    out = np.empty_like(noise)
    for c in range(2):
        a = np.pad(noise[c], r, mode="symmetric")
        rows = np.zeros((h + 2 * r, w))
        for i, k in enumerate(kern):
            rows += k * a[:, i:i + w]
        res = np.zeros((h, w))
        for i, k in enumerate(kern):
            res += k * rows[i:i + h]
        out[c] = res
    return alpha * out


def test_elastic_displacement_matches_reference_field():
    h = w = 64
    ref = _reference_field(h, w, 50.0, 5.0, seed=9, t=0)
    got = elastic_displacement((h, w), 50.0, 5.0, frame_rng(9, 0, _KIND_SALT["elastic"]))
    m_ref = np.hypot(*ref).mean()
    m_got = np.hypot(*got).mean()
    assert abs(m_got / m_ref - 1) < 0.2
    # grid lines become wavy: rows that were constant now vary along x
    grid = np.zeros((1, h, w))
    grid[:, ::8, :] = 1.0
    warped = elastic_warp(grid, 50.0, 5.0, seed=9)
    assert np.abs(warped - grid).max() > 0.5


@pytest.mark.parametrize("kind,params", [("gaussian_noise", {"sigma": -1}), ("patch_drop", {"p": 1.5}),
                                         ("impulse", {"p_salt": 0.7, "p_pepper": 0.5}),
                                         ("elastic", {"sigma": 0}), ("blur", {}),
                                         ("frame_drop", {"q": 0.1})])
def test_spec_validation(kind, params):
    with pytest.raises(ValueError):
        CorruptionSpec(kind, params)


def test_spec_parse_roundtrip():
    s = CorruptionSpec.parse("patch_drop:patch=4,p=0.25:7")
    assert s == CorruptionSpec("patch_drop", {"patch": 4, "p": 0.25}, 7)
    assert CorruptionSpec.parse("frame_drop") == CorruptionSpec("frame_drop", {"p": 0.1}, 0)
    assert CorruptionSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        CorruptionSpec.parse("gaussian_noise:sigma")


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["gaussian_noise", "impulse", "patch_drop", "frame_drop", "elastic"]),
       st.integers(0, 2 ** 31 - 1), st.integers(0, 50))
def test_targets_untouched_and_reproducible(kind, seed, t):
    seq = _seq(tau=2, shape=(1, 12, 12))
    spec = CorruptionSpec(kind, seed=seed)
    out = corrupt(seq, spec)
    assert np.array_equal(out.targets, seq.targets)
    assert np.array_equal(corrupt_frame(seq.frames[0], spec, t), corrupt_frame(seq.frames[0], spec, t))
