"""Synthetic sequences with exact ground-truth flow and occlusion.

A window is moved (and optionally grown) over a source image; each window
is resampled to a fixed output size.  Since window placement is an affine
map of output pixel coordinates, correspondences between any two frames
are analytic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import sample_bilinear, warp_image
from .imgcore import FlowField, Sequence, as_image


def make_texture(height: int, width: int, seed: int = 0, components: int = 12,
                 min_wavelength: float = 8.0, max_wavelength: float = 48.0) -> np.ndarray:
    """Smooth colour texture from random plane waves, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.empty((height, width, 3))
    for c in range(3):
        acc = np.zeros((height, width))
        for _ in range(components):
            lam = rng.uniform(min_wavelength, max_wavelength)
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            k = 2 * np.pi / lam
            acc += np.cos(k * (np.cos(theta) * xs + np.sin(theta) * ys) + phase)
        acc /= np.sqrt(components / 2.0)
        out[..., c] = 0.5 + 0.18 * acc
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class Window:
    """Source rectangle ``[left, left + width) x [top, top + height)``."""

    left: float
    top: float
    width: float
    height: float

    def source_coords(self, out_h: int, out_w: int):
        ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
        sx = self.left + (xs + 0.5) * self.width / out_w - 0.5
        sy = self.top + (ys + 0.5) * self.height / out_h - 0.5
        return sx, sy

    def to_output(self, sx, sy, out_h: int, out_w: int):
        x = (sx + 0.5 - self.left) * out_w / self.width - 0.5
        y = (sy + 0.5 - self.top) * out_h / self.height - 0.5
        return x, y


def window_flow(a: Window, b: Window, out_h: int, out_w: int):
    """Flow from frame ``a`` to frame ``b`` on the grid of ``a`` plus its occlusion mask."""
    sx, sy = a.source_coords(out_h, out_w)
    x, y = b.to_output(sx, sy, out_h, out_w)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    flow = np.stack([x - xs, y - ys], axis=-1)
    occ = ~((x >= 0) & (x <= out_w - 1) & (y >= 0) & (y <= out_h - 1))
    return FlowField(flow, "forward"), occ


def _pair_entries(seq_frames, windows, out_h, out_w, offsets):
    flows, occs = {}, {}
    n = len(windows)
    for j in offsets:
        for a in range(n - j):
            b = a + j
            f, occ_f = window_flow(windows[a], windows[b], out_h, out_w)
            g, occ_b = window_flow(windows[b], windows[a], out_h, out_w)
            flows[(a, b)] = FlowField(f.vectors, "forward")
            flows[(b, a)] = FlowField(g.vectors, "backward")
            occs[(a, b)] = occ_f
            occs[(b, a)] = occ_b
    return flows, occs


def generate_sequence(source, frames: int = 5, max_shift: int = 32, max_zoom: int = 32,
                      seed: int = 0, size: tuple[int, int] = (96, 96),
                      offsets=(1,), shifts=None, zooms=None) -> Sequence:
    """Crop-translation/zoom sequence with analytic flow and occlusion.

    Per step and axis, an integer content shift in ``[-max_shift, max_shift]``
    and an integer window growth in ``[0, max_zoom]`` are drawn uniformly.
    Positive shifts move content right/down (the window moves the other
    way).  ``shifts``/``zooms`` (lists of ``(x, y)`` per step) override the
    random draws.  Flows are emitted for every offset in ``offsets`` in both
    directions; ``seq.gt_occlusions[(a, b)]`` is True on the grid of ``a``
    where the correspondence leaves frame ``b``.
    """
    source = as_image(source)
    out_h, out_w = size
    rng = np.random.default_rng(seed)
    steps = frames - 1
    if shifts is None:
        shifts = rng.integers(-max_shift, max_shift + 1, size=(steps, 2)).tolist()
    if zooms is None:
        zooms = (rng.integers(0, max_zoom + 1, size=(steps, 2)).tolist()
                 if max_zoom > 0 else [[0, 0]] * steps)
    if len(shifts) != steps or len(zooms) != steps:
        raise ValueError("shifts/zooms must have one entry per step")

    left, top = 0.0, 0.0
    w, h = float(out_w), float(out_h)
    rects = [(left, top, w, h)]
    for (dx, dy), (zx, zy) in zip(shifts, zooms):
        if zx < 0 or zy < 0:
            raise ValueError("zoom growth must be non-negative")
        left = left - dx * (w / out_w) - zx / 2.0
        top = top - dy * (h / out_h) - zy / 2.0
        w += zx
        h += zy
        rects.append((left, top, w, h))
    min_l = min(r[0] for r in rects)
    min_t = min(r[1] for r in rects)
    max_r = max(r[0] + r[2] for r in rects)
    max_b = max(r[1] + r[3] for r in rects)
    need_w, need_h = max_r - min_l, max_b - min_t
    src_h, src_w = source.shape[:2]
    if need_w > src_w or need_h > src_h:
        raise ValueError(f"window path needs {need_w:.0f}x{need_h:.0f} px, source is {src_w}x{src_h}")
    # centre the path in the source, keeping integer offsets
    off_x = np.floor((src_w - need_w) / 2.0) - min_l
    off_y = np.floor((src_h - need_h) / 2.0) - min_t
    windows = [Window(l + off_x, t + off_y, ww, hh) for l, t, ww, hh in rects]

    imgs = []
    for win in windows:
        sx, sy = win.source_coords(out_h, out_w)
        imgs.append(sample_bilinear(source, sx, sy)[0])
    flows, occs = _pair_entries(imgs, windows, out_h, out_w, offsets)
    seq = Sequence(imgs, dict(flows), dict(flows), occs)
    seq.meta = {"shifts": [list(s) for s in shifts], "zooms": [list(z) for z in zooms],
                "windows": windows}
    return seq


def generate_occlusion_sequence(background, occluder, frames: int = 7,
                                start: tuple[int, int] = (0, 16), speed: int = 12,
                                offsets=(1, 2, 4)) -> Sequence:
    """Static background with an opaque patch sliding right by ``speed`` px per frame.

    ``background`` sets the frame size; ``occluder`` is pasted with its top-left
    corner at ``(start[0] + k * speed, start[1])`` in frame ``k``.  Background
    flow is zero; patch pixels move with the patch.
    """
    bg = as_image(background)
    patch = as_image(occluder)
    h, w = bg.shape[:2]
    ph, pw = patch.shape[:2]
    x0, y0 = start

    def patch_mask(k):
        m = np.zeros((h, w), dtype=bool)
        left = x0 + k * speed
        l, r = max(left, 0), min(left + pw, w)
        if r > l:
            m[y0:y0 + ph, l:r] = True
        return m

    imgs = []
    for k in range(frames):
        img = bg.copy()
        left = x0 + k * speed
        l, r = max(left, 0), min(left + pw, w)
        if r > l:
            img[y0:y0 + ph, l:r] = patch[:, l - left:r - left]
        imgs.append(img)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    flows, occs = {}, {}
    for j in offsets:
        for a in range(frames - j):
            for s, t in ((a, a + j), (a + j, a)):
                ms, mt = patch_mask(s), patch_mask(t)
                du = (t - s) * speed
                vec = np.zeros((h, w, 2))
                vec[ms, 0] = du
                # target position hidden by the patch, or a patch pixel leaving the image
                tx = xs + vec[..., 0]
                inside = (tx >= 0) & (tx <= w - 1)
                txi = np.clip(tx, 0, w - 1).astype(np.intp)
                hit_patch = mt[ys.astype(np.intp), txi]
                occ = ~inside | (~ms & hit_patch)
                flows[(s, t)] = FlowField(vec, "forward" if t > s else "backward")
                occs[(s, t)] = occ
    seq = Sequence(imgs, dict(flows), dict(flows), occs)
    seq.meta = {"patch_masks": [patch_mask(k) for k in range(frames)]}
    return seq


def verify_gt(seq: Sequence, tolerance: float = 2.0 / 255) -> dict:
    """Warp frame t+1 onto frame t with the ground-truth flow and measure the residual.

    Only non-occluded pixels are counted.
    """
    flows = seq.gt_flows or seq.flows
    residuals = []
    for a in range(len(seq) - 1):
        flow = flows[(a, a + 1)]
        warped, inside = warp_image(seq.frames[a + 1], flow)
        valid = inside.weights > 0
        occ = seq.gt_occlusions.get((a, a + 1))
        if occ is not None:
            valid &= ~occ
        residuals.append(np.abs(warped - seq.frames[a])[valid])
    r = np.concatenate([x.ravel() for x in residuals]) if residuals else np.zeros(0)
    mean = float(r.mean()) if r.size else 0.0
    return {"mean_abs": mean, "max_abs": float(r.max()) if r.size else 0.0,
            "pixels": int(r.size), "passed": mean < tolerance}


def sphere_texture(seed: int = 0, components: int = 12, min_freq: float = 3.0,
                   max_freq: float = 9.0):
    """Smooth colour function on the unit sphere, ``fn(dirs (..., 3)) -> (..., 3)``.

    Sum of random 3-D plane waves restricted to the sphere; values in [0, 1].
    """
    rng = np.random.default_rng(seed)
    waves = []
    for _ in range(3):
        k = rng.standard_normal((components, 3))
        k *= (rng.uniform(min_freq, max_freq, components) / np.linalg.norm(k, axis=1))[:, None]
        waves.append((k, rng.uniform(0, 2 * np.pi, components)))

    def fn(dirs):
        dirs = np.asarray(dirs, dtype=np.float64)
        out = np.empty(dirs.shape[:-1] + (3,))
        for c, (k, ph) in enumerate(waves):
            acc = np.cos(dirs @ k.T + ph).sum(axis=-1) / np.sqrt(components / 2.0)
            out[..., c] = 0.5 + 0.18 * acc
        return np.clip(out, 0.0, 1.0)

    return fn
