"""Seeded convolutional feature extractor and the content/style losses.

Feature maps at a tap are ``(N, M)`` arrays (channels x positions).  A
:data:`FeatureStack` is a ``dict`` from tap name to such an array.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imgcore import as_image

NORM_EPS = 1e-5

FeatureStack = dict


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    relu: bool = True
    instance_norm: bool = False


def _default_layers():
    return [LayerSpec(32, 3, 1), LayerSpec(16, 3, 2), LayerSpec(16, 3, 2)]


@dataclass
class ExtractorConfig:
    """Layer stack, seed and tap names; serialisable to JSON."""

    layers: list[LayerSpec] = field(default_factory=_default_layers)
    in_channels: int = 3
    seed: int = 0
    # subtracted from every input pixel before the first layer (mean-pixel centring)
    input_offset: float = 0.5
    content_taps: tuple[str, ...] = ("layer3",)
    style_taps: tuple[str, ...] = ("layer1", "layer2", "layer3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["content_taps"] = list(self.content_taps)
        d["style_taps"] = list(self.style_taps)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorConfig":
        d = dict(d)
        if "layers" in d:
            d["layers"] = [LayerSpec(**l) for l in d["layers"]]
        for key in ("content_taps", "style_taps"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ExtractorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _conv_forward(x, w, stride):
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def _conv_backward(dout, w, in_shape, stride):
    c, h, wd = in_shape
    k = w.shape[-1]
    p = k // 2
    ho, wo = dout.shape[1:]
    dcols = np.tensordot(w, dout, axes=([0], [0]))  # (C, k, k, Ho, Wo)
    dxp = np.zeros((c, h + 2 * p, wd + 2 * p))
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += dcols[:, ky, kx]
    return dxp[:, p:p + h, p:p + wd]


def _inorm_forward(x):
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = (x - mu) * inv
    return xhat, (xhat, inv)


def _inorm_backward(dy, cache):
    xhat, inv = cache
    return inv * (dy - dy.mean(axis=(1, 2), keepdims=True)
                  - xhat * (dy * xhat).mean(axis=(1, 2), keepdims=True))


class FeatureExtractor:
    """Fixed random-weight conv stack standing in for a pretrained network.

    Weights depend only on ``config.seed``.  Each layer is
    conv -> [instance norm] -> [ReLU]; the tap ``layerK`` is the output of
    layer K.
    """

    def __init__(self, config: ExtractorConfig | None = None):
        self.config = config or ExtractorConfig()
        rng = np.random.default_rng(self.config.seed)
        self.weights = []
        c = self.config.in_channels
        for spec in self.config.layers:
            fan_in = c * spec.kernel * spec.kernel
            w = rng.standard_normal((spec.out_channels, c, spec.kernel, spec.kernel))
            self.weights.append(w / np.sqrt(fan_in))
            c = spec.out_channels
        self.names = [f"layer{i + 1}" for i in range(len(self.config.layers))]
        for tap in (*self.config.content_taps, *self.config.style_taps):
            if tap not in self.names:
                raise ValueError(f"tap {tap!r} does not name a layer")
        self._wanted = set(self.config.content_taps) | set(self.config.style_taps)
        self._last = max(self.names.index(t) for t in self._wanted)

    @property
    def content_taps(self):
        return self.config.content_taps

    @property
    def style_taps(self):
        return self.config.style_taps

    def output_shapes(self, height: int, width: int) -> dict[str, tuple[int, int, int]]:
        shapes = {}
        c = self.config.in_channels
        for name, spec in zip(self.names, self.config.layers):
            if height < spec.kernel or width < spec.kernel:
                raise ValueError(f"input {height}x{width} too small for {name}")
            height = (height - 1) // spec.stride + 1
            width = (width - 1) // spec.stride + 1
            c = spec.out_channels
            shapes[name] = (c, height, width)
        return shapes

    def forward(self, img):
        """Return ``(features, cache)``; ``cache`` feeds :meth:`backward`."""
        img = as_image(img)
        if img.shape[2] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} channels, got {img.shape[2]}")
        self.output_shapes(*img.shape[:2])
        x = np.ascontiguousarray(img.transpose(2, 0, 1)) - self.config.input_offset
        feats, cache = {}, []
        for i, (name, spec, w) in enumerate(zip(self.names, self.config.layers, self.weights)):
            if i > self._last:
                break
            entry = {"in_shape": x.shape}
            x = _conv_forward(x, w, spec.stride)
            if spec.instance_norm:
                x, entry["norm"] = _inorm_forward(x)
            if spec.relu:
                entry["active"] = x > 0
                x = x * entry["active"]
            cache.append(entry)
            if name in self._wanted:
                feats[name] = x.reshape(x.shape[0], -1)
        return feats, cache

    def extract(self, img) -> FeatureStack:
        return self.forward(img)[0]

    def backward(self, cache, grads: dict) -> np.ndarray:
        """Chain per-tap gradients ``dL/dF`` back to an ``(H, W, C)`` image gradient."""
        top = max(self.names.index(t) for t in grads) if grads else -1
        g = None
        for i in range(top, -1, -1):
            entry = cache[i]
            spec = self.config.layers[i]
            w = self.weights[i]
            name = self.names[i]
            shape = (spec.out_channels,) + self._out_hw(cache, i)
            if name in grads:
                tap_g = grads[name].reshape(shape)
                g = tap_g if g is None else g + tap_g
            if g is None:
                continue
            if spec.relu:
                g = g * entry["active"]
            if spec.instance_norm:
                g = _inorm_backward(g, entry["norm"])
            g = _conv_backward(g, w, entry["in_shape"], spec.stride)
        if g is None:
            c, h, w = cache[0]["in_shape"]
            return np.zeros((h, w, c))
        return g.transpose(1, 2, 0)

    def _out_hw(self, cache, i):
        if i + 1 < len(cache):
            return cache[i + 1]["in_shape"][1:]
        _, h, w = cache[i]["in_shape"]
        s = self.config.layers[i].stride
        return ((h - 1) // s + 1, (w - 1) // s + 1)

    def content_targets(self, img) -> FeatureStack:
        feats = self.extract(img)
        return {t: feats[t] for t in self.content_taps}

    def style_targets(self, img, target_hw=None) -> dict:
        """Gram matrices of ``img`` at the style taps.

        With ``target_hw`` set, each Gram is rescaled by ``M_target / M_style``
        so a style image of a different size describes the same per-position
        statistics for an output of size ``target_hw``.
        """
        feats = self.extract(img)
        grams = {t: gram(feats[t]) for t in self.style_taps}
        if target_hw is not None and tuple(target_hw) != as_image(img).shape[:2]:
            shapes = self.output_shapes(*target_hw)
            for t in grams:
                grams[t] = grams[t] * (shapes[t][1] * shapes[t][2] / feats[t].shape[1])
        return grams


def extract(extractor: FeatureExtractor, img) -> FeatureStack:
    return extractor.extract(img)


def extract_backward(extractor: FeatureExtractor, cache, grads: dict) -> np.ndarray:
    return extractor.backward(cache, grads)


def gram(features: np.ndarray) -> np.ndarray:
    """Unnormalised Gram matrix ``G_ij = sum_k F_ik F_jk``."""
    f = np.asarray(features, dtype=np.float64)
    return f @ f.T


def content_loss(P: FeatureStack, F: FeatureStack):
    """Sum over the taps in ``P`` of ``||F - P||^2 / (N M)``.

    Returns ``(value, grads)`` with ``grads[tap] = dL/dF[tap]``.
    """
    total = 0.0
    grads = {}
    for tap, p in P.items():
        f = F[tap]
        if f.shape != p.shape:
            raise ValueError(f"content tap {tap}: shape {f.shape} vs {p.shape}")
        n, m = f.shape
        diff = f - p
        total += float(np.sum(diff * diff)) / (n * m)
        grads[tap] = 2.0 * diff / (n * m)
    return total, grads


def style_loss(A: dict, F: FeatureStack):
    """Sum over the taps in ``A`` of ``||gram(F) - A||^2 / (N^2 M^2)``.

    Returns ``(value, grads)`` with ``grads[tap] = dL/dF[tap]``.
    """
    total = 0.0
    grads = {}
    for tap, a in A.items():
        f = F[tap]
        n, m = f.shape
        if a.shape != (n, n):
            raise ValueError(f"style tap {tap}: gram {a.shape} vs features {f.shape}")
        diff = gram(f) - a
        scale = 1.0 / (n * n * m * m)
        total += scale * float(np.sum(diff * diff))
        grads[tap] = 4.0 * scale * diff @ f
    return total, grads


def instance_norm(x, eps: float = NORM_EPS) -> np.ndarray:
    """Per-sample, per-channel normalisation of a ``(B, C, H, W)`` tensor."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def batch_norm(x, gamma=1.0, beta=0.0, eps: float = NORM_EPS) -> np.ndarray:
    """Per-channel normalisation over batch and space, then scale and shift.

    ``gamma`` and ``beta`` are scalars or length-C vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    g = np.asarray(gamma, dtype=np.float64).reshape(1, -1, 1, 1) if np.ndim(gamma) else gamma
    b = np.asarray(beta, dtype=np.float64).reshape(1, -1, 1, 1) if np.ndim(beta) else beta
    return g * (x - mu) / np.sqrt(var + eps) + b
