import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidstyle.flow import detect_disocclusion, warp_flow
from vidstyle.imgcore import FlowField
from vidstyle.synthdata import (generate_occlusion_sequence, generate_sequence, make_texture,
                                sphere_texture, verify_gt)


@pytest.fixture(scope="module")
def source():
    return make_texture(160, 160, seed=4)


def test_texture_range_and_determinism():
    a = make_texture(20, 30, seed=1)
    assert a.shape == (20, 30, 3) and a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, make_texture(20, 30, seed=1))
    assert not np.array_equal(a, make_texture(20, 30, seed=2))


def test_defaults():
    import inspect
    sig = inspect.signature(generate_sequence).parameters
    assert sig["frames"].default == 5 and sig["max_shift"].default == 32 and sig["max_zoom"].default == 32


def test_integer_shift_example(source):
    seq = generate_sequence(source, frames=2, shifts=[[4, 0]], zooms=[[0, 0]], size=(32, 32))
    bwd = seq.gt_flows[(1, 0)].vectors
    assert np.all(bwd[..., 0] == -4) and np.all(bwd[..., 1] == 0)
    occ = seq.gt_occlusions[(0, 1)]
    assert occ[:, -4:].all() and not occ[:, :-4].any()
    assert np.array_equal(seq.frames[1][:, 4:], seq.frames[0][:, :-4])


def test_static_example(source):
    seq = generate_sequence(source, frames=3, max_shift=0, max_zoom=0, size=(24, 24))
    assert all(np.array_equal(f, seq.frames[0]) for f in seq.frames)
    assert all(np.all(f.vectors == 0) for f in seq.gt_flows.values())
    assert not any(o.any() for o in seq.gt_occlusions.values())


def test_zoom_flow_is_centred_scaling(source):
    s, g = 32, 8
    seq = generate_sequence(source, frames=2, shifts=[[0, 0]], zooms=[[g, g]], size=(s, s))
    f = seq.gt_flows[(0, 1)].vectors
    c = (s - 1) / 2
    x = np.arange(s) - c
    assert np.allclose(f[0, :, 0], -x * g / (s + g), atol=1e-12)
    assert np.allclose(f[:, 0, 1], -x * g / (s + g), atol=1e-12)
    z = g / 2
    assert abs(f[0, -1, 0]) == pytest.approx((s - 1) / 2 * 2 * z / (s + 2 * z))
    stats = verify_gt(seq)
    assert stats["passed"] and stats["mean_abs"] < 2 / 255


def test_verify_integer_exact_and_corrupted(source):
    seq = generate_sequence(source, frames=4, max_shift=5, max_zoom=0, seed=2, size=(32, 32))
    assert verify_gt(seq)["mean_abs"] == 0.0
    bad = dict(seq.gt_flows)
    bad[(0, 1)] = FlowField(bad[(0, 1)].vectors + 3.0)
    seq.gt_flows = bad
    assert not verify_gt(seq)["passed"]


def test_random_zoom_sequence_verifies(source):
    seq = generate_sequence(source, frames=5, max_shift=8, max_zoom=8, seed=3, size=(48, 48))
    assert verify_gt(seq)["passed"]


def test_infeasible_window():
    with pytest.raises(ValueError):
        generate_sequence(make_texture(40, 40), frames=5, max_shift=32, max_zoom=0, size=(32, 32),
                          shifts=[[10, 0]] * 4)


def test_determinism(source):
    a = generate_sequence(source, frames=3, max_shift=6, max_zoom=6, seed=11, size=(32, 32))
    b = generate_sequence(source, frames=3, max_shift=6, max_zoom=6, seed=11, size=(32, 32))
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert all(np.array_equal(a.gt_flows[k].vectors, b.gt_flows[k].vectors) for k in a.gt_flows)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_detector_agrees_with_analytic_mask(seed):
    src = make_texture(96, 96, seed=seed % 7)
    seq = generate_sequence(src, frames=3, max_shift=10, max_zoom=0, seed=seed, size=(32, 32))
    agree = []
    for (a, b), occ in seq.gt_occlusions.items():
        fwd, bwd = seq.gt_flows[(b, a)], seq.gt_flows[(a, b)]
        det = detect_disocclusion(warp_flow(fwd, bwd), bwd)
        agree.append(np.mean(det == occ))
    assert min(agree) >= 0.99


def test_occlusion_sequence():
    bg = make_texture(24, 48, seed=1)
    patch = np.full((6, 6, 3), 0.1)
    seq = generate_occlusion_sequence(bg, patch, frames=4, start=(2, 5), speed=6, offsets=(1, 2))
    masks = seq.meta["patch_masks"]
    assert masks[1][5:11, 8:14].all() and masks[1].sum() == 36
    assert np.all(seq.frames[1][masks[1]] == 0.1)
    assert np.all(seq.frames[1][~masks[1]] == bg[~masks[1]])
    f = seq.gt_flows[(0, 2)].vectors
    assert np.all(f[masks[0], 0] == 12) and np.all(f[~masks[0]] == 0)
    assert verify_gt(seq)["mean_abs"] == 0.0


def test_sphere_texture():
    fn = sphere_texture(3)
    d = np.random.default_rng(0).normal(size=(50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    v = fn(d)
    assert v.shape == (50, 3) and v.min() >= 0 and v.max() <= 1
    assert np.array_equal(v, sphere_texture(3)(d))
