import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import disocclusion_scalar, longterm_scalar, motion_boundary_scalar, warped_flow_scalar
from vidstyle import flow as fl
from vidstyle.flow import (detect_disocclusion, detect_motion_boundary, longterm_weights,
                           save_weight_map, shortterm_weights, warp_flow, warp_image)
from vidstyle.imgcore import DISOCCLUDED, OUT_OF_BOUNDS, FlowField, WeightMap, read_mask


def const_flow(h, w, u, v, direction="forward"):
    vec = np.zeros((h, w, 2))
    vec[..., 0], vec[..., 1] = u, v
    return FlowField(vec, direction)


def ramp(h=4, w=8):
    x = np.arange(w) / w
    return np.broadcast_to(x[None, :, None], (h, w, 3)).copy()


def test_coefficients_pinned():
    assert (fl.DISOCC_REL, fl.DISOCC_ABS) == (0.01, 0.5)
    assert (fl.MOTION_REL, fl.MOTION_ABS) == (0.01, 0.002)


def test_zero_flow_identity():
    img = np.random.default_rng(0).uniform(size=(5, 6, 3))
    out, wm = warp_image(img, FlowField.zeros(5, 6))
    assert np.array_equal(out, img)
    assert np.all(wm.weights == 1)


def test_unit_shift_on_ramp():
    img = ramp()
    out, wm = warp_image(img, const_flow(4, 8, 1.0, 0.0))
    w = img.shape[1]
    assert np.allclose(out[:, :-1, 0], (np.arange(w - 1) + 1) / w)
    assert np.all(wm.weights[:, -1] == 0)
    assert np.all(wm.flags[:, -1] & OUT_OF_BOUNDS)
    assert np.all(wm.weights[:, :-1] == 1)


def test_half_shift_on_ramp():
    img = ramp()
    out, _ = warp_image(img, const_flow(4, 8, 0.5, 0.0))
    assert np.allclose(out[:, :-1, 0], (np.arange(7) + 0.5) / 8)


def test_integer_flow_is_exact_shift():
    img = np.random.default_rng(1).uniform(size=(6, 7, 3))
    out, wm = warp_image(img, const_flow(6, 7, -2.0, 1.0))
    assert np.array_equal(out[:-1, 2:], img[1:, :-2])
    assert np.all(wm.weights[:-1, 2:] == 1)


def test_warp_dimension_mismatch():
    with pytest.raises(ValueError):
        warp_image(np.zeros((3, 3, 3)), FlowField.zeros(3, 4))


def test_warp_flow_examples():
    assert np.all(warp_flow(FlowField.zeros(4, 4), FlowField.zeros(4, 4, "backward")).vectors == 0)
    wt = warp_flow(const_flow(4, 12, 5, 0), const_flow(4, 12, -5, 0, "backward")).vectors
    assert np.all(wt[:, 5:] == [5.0, 0.0])
    assert np.all(np.isnan(wt[:, :5]))


def test_sentinel_counts_as_disoccluded():
    bwd = const_flow(3, 3, 10, 0, "backward")
    wt = warp_flow(FlowField.zeros(3, 3), bwd)
    assert np.all(detect_disocclusion(wt, bwd))


def test_disocclusion_examples():
    z = FlowField.zeros(2, 2)
    assert not detect_disocclusion(z, z).any()
    assert not detect_disocclusion(const_flow(2, 2, 5, 0), const_flow(2, 2, -5, 0)).any()
    assert detect_disocclusion(const_flow(2, 2, 5, 0), FlowField.zeros(2, 2)).all()


def test_motion_boundary_examples():
    assert not detect_motion_boundary(const_flow(5, 5, 3.0, -1.0)).any()
    vec = np.zeros((5, 6, 2))
    vec[:, 3:, 0] = 1.0
    mb = detect_motion_boundary(FlowField(vec))
    assert mb[:, 2].all() and mb[:, 3].all()
    assert not mb[:, 0].any() and not mb[:, 5].any()
    smooth = np.zeros((5, 6, 2))
    smooth[..., 0] = 0.01 * np.arange(6)[None, :]
    assert not detect_motion_boundary(FlowField(smooth)).any()


def test_shortterm_examples():
    assert np.all(shortterm_weights(const_flow(6, 6, 1, 0), const_flow(6, 6, -1, 0, "backward"))
                  .weights[:, 1:] == 1)
    bwd = np.zeros((8, 8, 2))
    bwd[2:5, 2:5, 0] = 10.0
    wm = shortterm_weights(FlowField.zeros(8, 8), FlowField(bwd, "backward"))
    assert np.all(wm.weights[2:5, 2:5] == 0)
    assert np.all(wm.flags[2:5, 2:5] & DISOCCLUDED)
    left = shortterm_weights(const_flow(4, 6, 2, 0), const_flow(4, 6, -2, 0, "backward"))
    assert np.all(left.weights[:, :2] == 0)
    assert np.all(left.flags[:, :2] & OUT_OF_BOUNDS)
    assert np.all(left.weights[:, 2:] == 1)


def test_shortterm_consistent_constant_all_ones():
    wm = shortterm_weights(FlowField.zeros(5, 5), FlowField.zeros(5, 5, "backward"))
    assert np.all(wm.weights == 1) and np.all(wm.flags == 0)


def test_longterm_examples():
    single = [WeightMap(np.array([[1.0, 0.0, 0.0, 1.0]]))]
    assert np.array_equal(longterm_weights(single)[0].weights, single[0].weights)
    c1 = WeightMap(np.array([[1.0, 0.0, 0.0, 1.0]]))
    c2 = WeightMap(np.array([[1.0, 1.0, 0.0, 1.0]]))
    assert longterm_weights([c1, c2])[1].weights.tolist() == [[0.0, 1.0, 0.0, 0.0]]
    ones = WeightMap.ones(2, 3)
    assert np.all(longterm_weights([ones, ones, ones])[2].weights == 0)
    with pytest.raises(ValueError):
        longterm_weights([ones, WeightMap.ones(3, 3)])


def _random_flows(rng, h, w, scale):
    fwd = FlowField(rng.normal(scale=scale, size=(h, w, 2)), "forward")
    bwd = FlowField(-fwd.vectors + rng.normal(scale=scale / 3, size=(h, w, 2)), "backward")
    return fwd, bwd


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(2, 7), st.floats(0.1, 3.0))
def test_detectors_match_scalar(seed, h, w, scale):
    rng = np.random.default_rng(seed)
    fwd, bwd = _random_flows(rng, h, w, scale)
    wt = warp_flow(fwd, bwd)
    ref = warped_flow_scalar(fwd.vectors, bwd.vectors)
    assert np.array_equal(np.isnan(wt.vectors), np.isnan(ref))
    assert np.allclose(np.nan_to_num(wt.vectors), np.nan_to_num(ref), rtol=0, atol=1e-12)
    assert np.array_equal(detect_disocclusion(wt, bwd), disocclusion_scalar(ref, bwd.vectors))
    assert np.array_equal(detect_motion_boundary(bwd), motion_boundary_scalar(bwd.vectors))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_longterm_properties(seed, k):
    rng = np.random.default_rng(seed)
    maps = [WeightMap(rng.uniform(size=(4, 5))) for _ in range(k)]
    out = longterm_weights(maps)
    for o, r in zip(out, longterm_scalar([m.weights for m in maps])):
        assert np.array_equal(o.weights, r)
    total = sum(o.weights for o in out)
    assert np.all(total <= np.max([m.weights for m in maps], axis=0) + 1e-12)
    assert np.all((total >= 0) & (total <= 1 + 1e-12))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_shortterm_binary_and_flags_consistent(seed):
    rng = np.random.default_rng(seed)
    fwd, bwd = _random_flows(rng, 6, 6, 1.5)
    wm = shortterm_weights(fwd, bwd)
    assert set(np.unique(wm.weights)) <= {0.0, 1.0}
    assert np.array_equal(wm.weights == 0, wm.flags != 0)


def test_weight_map_export(tmp_path):
    wm = shortterm_weights(const_flow(4, 6, 2, 0), const_flow(4, 6, -2, 0, "backward"))
    save_weight_map(wm, tmp_path / "c.pgm", tmp_path / "f.pgm")
    back = read_mask(tmp_path / "c.pgm")
    assert np.array_equal(back[..., 0] if back.ndim == 3 else back, wm.weights)
    assert (tmp_path / "f.pgm").exists()
