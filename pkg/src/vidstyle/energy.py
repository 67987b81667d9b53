"""Per-frame stylisation energies: content + style + weighted temporal terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import WeightMap, as_image
from .perceptual import FeatureExtractor, content_loss, style_loss


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 20.0
    gamma: float = 200.0
    robust: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def temporal_weight(self) -> float:
        # the absolute-error variant runs with twice the temporal weight
        return 2.0 * self.gamma if self.robust else self.gamma


def _weights_array(c, shape):
    if c is None:
        return np.ones(shape)
    w = c.weights if isinstance(c, WeightMap) else np.asarray(c, dtype=np.float64)
    if w.shape != shape:
        raise ValueError(f"weight map {w.shape} does not match image {shape}")
    return w


def temporal_loss(x, warped, c, robust: bool = False):
    """Weighted mean deviation from a warped target; returns ``(value, grad)``.

    Squared: ``sum c (x - w)^2 / D``.  Robust: ``sum c |x - w| / D`` with
    subgradient 0 at ties.  ``D`` counts pixels times channels and ``c``
    broadcasts over channels.
    """
    x = as_image(x)
    warped = as_image(warped)
    if x.shape != warped.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {warped.shape}")
    cw = _weights_array(c, x.shape[:2])[..., None]
    d = x.size
    diff = x - warped
    if robust:
        return float(np.sum(cw * np.abs(diff))) / d, cw * np.sign(diff) / d
    return float(np.sum(cw * diff * diff)) / d, 2.0 * cw * diff / d


class FrameEnergy:
    """``alpha L_content + beta L_style + gamma sum_k L_temporal(x, target_k, c_k)``.

    Callable as ``energy(x) -> (value, grad)`` with ``x`` of shape ``(H, W, 3)``.
    Content and style targets are precomputed once at construction.
    """

    def __init__(self, extractor: FeatureExtractor, content_image, style_grams: dict,
                 weights: LossWeights, temporal_terms=()):
        self.extractor = extractor
        self.weights = weights
        self.content = extractor.content_targets(content_image) if weights.alpha else {}
        self.style = style_grams if weights.beta else {}
        self.temporal_terms = [(as_image(t), c) for t, c in temporal_terms]

    def terms(self, x) -> dict:
        """Unweighted loss components at ``x``."""
        out = {"content": 0.0, "style": 0.0, "temporal": 0.0}
        if self.content or self.style:
            F = self.extractor.extract(x)
            if self.content:
                out["content"] = content_loss(self.content, F)[0]
            if self.style:
                out["style"] = style_loss(self.style, F)[0]
        for target, c in self.temporal_terms:
            out["temporal"] += temporal_loss(x, target, c, self.weights.robust)[0]
        return out

    def __call__(self, x):
        x = as_image(x)
        w = self.weights
        value = 0.0
        grad = np.zeros_like(x)
        if self.content or self.style:
            F, cache = self.extractor.forward(x)
            tap_grads = {}
            if self.content:
                v, gs = content_loss(self.content, F)
                value += w.alpha * v
                for t, g in gs.items():
                    tap_grads[t] = w.alpha * g
            if self.style:
                v, gs = style_loss(self.style, F)
                value += w.beta * v
                for t, g in gs.items():
                    tap_grads[t] = tap_grads[t] + w.beta * g if t in tap_grads else w.beta * g
            grad += self.extractor.backward(cache, tap_grads)
        if self.temporal_terms and w.gamma:
            gamma = w.temporal_weight
            for target, c in self.temporal_terms:
                v, g = temporal_loss(x, target, c, w.robust)
                value += gamma * v
                grad += gamma * g
        return value, grad


def longterm_energy(p, a, x, warped_list, c_long_list, weights: LossWeights,
                    extractor: FeatureExtractor | None = None):
    """Energy with one temporal term per admissible long-term offset."""
    extractor = extractor or FeatureExtractor()
    if len(warped_list) != len(c_long_list):
        raise ValueError("warped_list and c_long_list differ in length")
    grams = extractor.style_targets(a, as_image(p).shape[:2])
    energy = FrameEnergy(extractor, p, grams, weights, list(zip(warped_list, c_long_list)))
    return energy(x)


def shortterm_energy(p, a, x, warped_prev, c, weights: LossWeights,
                     extractor: FeatureExtractor | None = None):
    """Energy with a single temporal term; ``warped_prev=None`` drops it (first frame)."""
    if warped_prev is None:
        return longterm_energy(p, a, x, [], [], weights, extractor)
    return longterm_energy(p, a, x, [warped_prev], [c], weights, extractor)
