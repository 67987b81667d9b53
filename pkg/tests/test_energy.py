import numpy as np
import pytest

from gradcheck import check
from vidstyle.energy import FrameEnergy, LossWeights, longterm_energy, shortterm_energy, temporal_loss
from vidstyle.imgcore import WeightMap
from vidstyle.perceptual import FeatureExtractor


@pytest.fixture(scope="module")
def ex():
    return FeatureExtractor()


@pytest.fixture(scope="module")
def inst():
    rng = np.random.default_rng(0)
    return [rng.uniform(size=(16, 16, 3)) for _ in range(4)]


def test_temporal_loss_examples():
    x = np.full((1, 4, 1), 0.75)
    w = np.full((1, 4, 1), 0.25)
    assert temporal_loss(x, w, None)[0] == 0.25
    assert temporal_loss(x, w, None, robust=True)[0] == 0.5
    # a single deviating element out of D = 4
    w1 = x.copy()
    w1[0, 0, 0] = 0.25
    assert temporal_loss(x, w1, None)[0] == 0.0625
    assert temporal_loss(x, w1, None, robust=True)[0] == 0.125
    assert temporal_loss(x, x, None)[0] == 0.0
    assert temporal_loss(x, x, None, robust=True)[0] == 0.0
    v, g = temporal_loss(x, w, np.zeros((1, 4)))
    assert v == 0 and np.all(g == 0)


def test_temporal_loss_gradients_closed_form():
    rng = np.random.default_rng(1)
    x, w = rng.uniform(size=(3, 4, 3)), rng.uniform(size=(3, 4, 3))
    c = rng.uniform(size=(3, 4))
    _, g = temporal_loss(x, w, WeightMap(c))
    assert np.allclose(g, 2 * c[..., None] * (x - w) / x.size)
    _, gr = temporal_loss(x, x, c, robust=True)
    assert np.all(gr == 0)


def test_temporal_loss_shape_checks():
    with pytest.raises(ValueError):
        temporal_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), None)
    with pytest.raises(ValueError):
        temporal_loss(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.ones((3, 3)))


def test_robust_doubles_weight():
    assert LossWeights(gamma=5.0, robust=True).temporal_weight == 10.0
    assert LossWeights(gamma=5.0).temporal_weight == 5.0
    with pytest.raises(ValueError):
        LossWeights(beta=-1.0)


def test_gamma_zero_is_image_loss(ex, inst):
    p, a, x, w = inst
    lw = LossWeights(gamma=0.0)
    v, g = shortterm_energy(p, a, x, w, np.ones((16, 16)), lw, ex)
    v0, g0 = shortterm_energy(p, a, x, None, None, lw, ex)
    assert v == v0 and np.array_equal(g, g0)


def test_pure_temporal_at_target_is_zero(ex, inst):
    p, a, _, w = inst
    v, g = shortterm_energy(p, a, w, w, np.ones((16, 16)), LossWeights(alpha=0, beta=0), ex)
    assert v == 0 and np.all(g == 0)


def test_single_offset_longterm_equals_shortterm(ex, inst):
    p, a, x, w = inst
    c = np.random.default_rng(2).uniform(size=(16, 16))
    s = shortterm_energy(p, a, x, w, c, LossWeights(), ex)
    l = longterm_energy(p, a, x, [w], [c], LossWeights(), ex)
    assert s[0] == l[0] and s[1].tobytes() == l[1].tobytes()


def test_disjoint_supports_add(inst):
    rng = np.random.default_rng(3)
    x, w1, w2 = rng.uniform(size=(3, 8, 8, 3))
    c1 = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
    c2 = 1.0 - c1
    lw = LossWeights(alpha=0, beta=0)
    both = FrameEnergy(FeatureExtractor(), x, {}, lw, [(w1, c1), (w2, c2)])(x)
    one = FrameEnergy(FeatureExtractor(), x, {}, lw, [(w1, c1)])(x)
    two = FrameEnergy(FeatureExtractor(), x, {}, lw, [(w2, c2)])(x)
    assert both[0] == pytest.approx(one[0] + two[0], rel=1e-14)
    assert np.allclose(both[1], one[1] + two[1], rtol=0, atol=1e-18)


def test_terms_match_call(ex, inst):
    p, a, x, w = inst
    lw = LossWeights()
    e = FrameEnergy(ex, p, ex.style_targets(a), lw, [(w, None)])
    t = e.terms(x)
    assert e(x)[0] == pytest.approx(lw.alpha * t["content"] + lw.beta * t["style"]
                                    + lw.gamma * t["temporal"], rel=1e-12)


def test_mismatched_lists(ex, inst):
    p, a, x, w = inst
    with pytest.raises(ValueError):
        longterm_energy(p, a, x, [w, w], [None], LossWeights(), ex)


@pytest.mark.parametrize("kind", ["temporal", "temporal_robust", "shortterm", "longterm"])
def test_energy_gradients(kind):
    err, excluded = check(kind, 7)
    assert err < 1e-4 and excluded < 0.5
