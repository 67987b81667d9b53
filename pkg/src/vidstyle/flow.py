"""Flow-derived machinery: backward warping, consistency checks, weight maps."""
from __future__ import annotations

import numpy as np

from .imgcore import (DISOCCLUDED, MOTION_BOUNDARY, OUT_OF_BOUNDS, FlowField,
                      WeightMap, as_image, write_mask)

# Forward-backward consistency thresholds (Sundaram et al.).
DISOCC_REL = 0.01
DISOCC_ABS = 0.5
MOTION_REL = 0.01
MOTION_ABS = 0.002


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinearly sample ``img`` (H, W, C) at float positions.

    Returns ``(values, inside)``.  Positions outside ``[0, W-1] x [0, H-1]``
    are clamped to the border for the value and reported in ``inside``.
    """
    h, w = img.shape[:2]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.clip(np.floor(xc).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy, inside


def _sample_grid(flow: FlowField):
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs + flow.u, ys + flow.v


def _check_dims(a, b):
    if tuple(a) != tuple(b):
        raise ValueError(f"dimension mismatch: {tuple(a)} vs {tuple(b)}")


def warp_image(src, flow: FlowField):
    """Backward-warp ``src`` with ``flow`` defined on the target grid.

    ``out(x, y) = src(x + u(x, y), y + v(x, y))``.  To bring stylized frame
    t-1 onto frame t, pass the flow t -> t-1.
    """
    src = as_image(src)
    _check_dims(src.shape[:2], flow.shape)
    xs, ys = _sample_grid(flow)
    out, inside = sample_bilinear(src, xs, ys)
    flags = np.where(inside, 0, OUT_OF_BOUNDS).astype(np.uint8)
    return out, WeightMap(inside.astype(np.float64), flags)


def warp_flow(fwd: FlowField, bwd: FlowField) -> FlowField:
    """Forward flow resampled onto the second image: ``fwd((x, y) + bwd(x, y))``.

    Pixels whose lookup leaves the image are NaN.
    """
    _check_dims(fwd.shape, bwd.shape)
    xs, ys = _sample_grid(bwd)
    vals, inside = sample_bilinear(fwd.vectors, xs, ys)
    vals[~inside] = np.nan
    return FlowField(vals, "forward")


def detect_disocclusion(warped_fwd: FlowField, bwd: FlowField) -> np.ndarray:
    _check_dims(warped_fwd.shape, bwd.shape)
    wt = warped_fwd.vectors
    wb = bwd.vectors
    lhs = np.sum((wt + wb) ** 2, axis=-1)
    rhs = DISOCC_REL * (np.sum(wt ** 2, axis=-1) + np.sum(wb ** 2, axis=-1)) + DISOCC_ABS
    sentinel = np.any(np.isnan(wt), axis=-1)
    with np.errstate(invalid="ignore"):
        return (lhs > rhs) | sentinel


def _grad_sq(a: np.ndarray) -> np.ndarray:
    # central differences inside, one-sided at the border
    out = np.zeros_like(a)
    for axis in (0, 1):
        if a.shape[axis] > 1:
            out += np.gradient(a, axis=axis) ** 2
    return out


def detect_motion_boundary(bwd: FlowField) -> np.ndarray:
    lhs = _grad_sq(bwd.u) + _grad_sq(bwd.v)
    rhs = MOTION_REL * (bwd.u ** 2 + bwd.v ** 2) + MOTION_ABS
    return lhs > rhs


def shortterm_weights(fwd: FlowField, bwd: FlowField) -> WeightMap:
    """Weights on the grid of the second frame of the pair.

    ``fwd`` maps frame a -> b, ``bwd`` maps b -> a.  The weight is 0 at
    disocclusions, motion boundaries and where ``bwd`` leaves the image.
    """
    _check_dims(fwd.shape, bwd.shape)
    xs, ys = _sample_grid(bwd)
    h, w = bwd.shape
    oob = ~((xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1))
    disocc = detect_disocclusion(warp_flow(fwd, bwd), bwd)
    mb = detect_motion_boundary(bwd)
    flags = (np.where(disocc, DISOCCLUDED, 0) | np.where(mb, MOTION_BOUNDARY, 0)
             | np.where(oob, OUT_OF_BOUNDS, 0)).astype(np.uint8)
    return WeightMap((flags == 0).astype(np.float64), flags)


def longterm_weights(maps: list[WeightMap]) -> list[WeightMap]:
    """Connect each pixel only to the closest frame with a valid correspondence.

    ``maps[k]`` holds the short-term weights for the k-th smallest offset.
    A pixel keeps weight for offset j only to the extent that no nearer
    offset already claims it.
    """
    if not maps:
        return []
    shape = maps[0].shape
    for m in maps:
        _check_dims(m.shape, shape)
    out = []
    claimed = np.zeros(shape)
    for m in maps:
        w = np.maximum(m.weights - claimed, 0.0)
        out.append(WeightMap(w, m.flags))
        claimed = claimed + m.weights
    return out


def save_weight_map(wm: WeightMap, path, flags_path=None) -> None:
    """Debug export: weights scaled to 0..255, optional flag bitmask PGM."""
    write_mask(wm.weights, path)
    if flags_path is not None:
        write_mask(wm.flags / 7.0, flags_path)
