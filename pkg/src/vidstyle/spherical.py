"""Cubemap geometry and border-consistent stylisation of spherical images.

Face frames: each face has an outward normal ``n``, an up vector ``u`` and a
right vector ``r = n x u``; the pixel at normalised coordinates ``(s, t)``
(``s`` to the right, ``t`` downward, both in ``[-1, 1]`` on the face) looks
along ``n + s r - t u``.  An *extended* face of margin ``m`` continues the
same image plane ``m`` pixels past every edge.

Edges are indexed ``top, right, bottom, left``.  A neighbour's rotation is
the number of clockwise quarter turns that lays it flat across the shared
edge.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .energy import FrameEnergy, LossWeights
from .flow import sample_bilinear, shortterm_weights, warp_image
from .imgcore import FlowField, WeightMap, as_image
from .perceptual import FeatureExtractor
from .solver import SolverConfig, minimize
from .video import random_init

log = logging.getLogger(__name__)

FACE_LABELS = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")
DEFAULT_ORDER = ("+Z", "+X", "-Z", "-X", "+Y", "-Y")
EDGES = ("top", "right", "bottom", "left")
FILL_POLICIES = ("zeros", "seeded_noise")
DEFAULT_OVERLAP = 64

_NORMALS = {"+X": (1, 0, 0), "-X": (-1, 0, 0), "+Y": (0, 1, 0),
            "-Y": (0, -1, 0), "+Z": (0, 0, 1), "-Z": (0, 0, -1)}
_UPS = {"+X": (0, 1, 0), "-X": (0, 1, 0), "+Y": (0, 0, -1),
        "-Y": (0, 0, 1), "+Z": (0, 1, 0), "-Z": (0, 1, 0)}


def face_basis(label: str):
    """``(n, u, r)`` unit vectors of a face."""
    n = np.array(_NORMALS[label], dtype=np.float64)
    u = np.array(_UPS[label], dtype=np.float64)
    return n, u, np.cross(n, u)


def _label_of(vec) -> str:
    for lab, n in _NORMALS.items():
        if np.allclose(vec, n):
            return lab
    raise ValueError(f"{vec} is not a face normal")


def _edge_vector(label: str, edge: str):
    n, u, r = face_basis(label)
    return {"top": u, "right": r, "bottom": -u, "left": -r}[edge]


@dataclass(frozen=True)
class Neighbour:
    edge: str
    label: str
    their_edge: str
    rotation: int


def _build_adjacency():
    table = {}
    for lab in FACE_LABELS:
        n = face_basis(lab)[0]
        row = []
        for e in EDGES:
            other = _label_of(_edge_vector(lab, e))
            back = next(f for f in EDGES if np.allclose(_edge_vector(other, f), n))
            rot = (EDGES.index(e) + 2 - EDGES.index(back)) % 4
            row.append(Neighbour(e, other, back, rot))
        table[lab] = tuple(row)
    return table


ADJACENCY = _build_adjacency()


def neighbour(label: str, edge: str) -> Neighbour:
    return ADJACENCY[label][EDGES.index(edge)]


def check_adjacency(table=None) -> None:
    """Raise ``ValueError`` unless every directed edge has a matching inverse."""
    table = table or ADJACENCY
    for lab, row in table.items():
        if len(row) != 4 or len({nb.label for nb in row}) != 4:
            raise ValueError(f"face {lab} needs four distinct neighbours")
        for nb in row:
            back = next((b for b in table[nb.label] if b.edge == nb.their_edge), None)
            if back is None or back.label != lab or back.their_edge != nb.edge \
                    or (back.rotation + nb.rotation) % 4 != 0:
                raise ValueError(f"inconsistent adjacency {lab}:{nb.edge} -> {nb.label}")


@dataclass
class CubeFaceSet:
    """Six equal square faces keyed by label."""

    faces: dict
    overlap: int = DEFAULT_OVERLAP

    def __post_init__(self):
        if set(self.faces) != set(FACE_LABELS):
            raise ValueError(f"cube needs faces {FACE_LABELS}, got {sorted(self.faces)}")
        self.faces = {k: as_image(v) for k, v in self.faces.items()}
        shapes = {v.shape for v in self.faces.values()}
        if len(shapes) != 1:
            raise ValueError(f"faces differ in shape: {sorted(shapes)}")
        h, w, _ = shapes.pop()
        if h != w:
            raise ValueError("faces must be square")
        if self.overlap < 0 or 2 * self.overlap >= h:
            raise ValueError(f"overlap {self.overlap} invalid for face size {h}")

    @property
    def size(self) -> int:
        return next(iter(self.faces.values())).shape[0]

    @property
    def extended_size(self) -> int:
        return self.size + 2 * self.overlap


def pinhole_project(points, d: float = 1.0) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` onto the plane ``x3 = -d``: ``y = -(d / x3) (x1, x2)``."""
    p = np.asarray(points, dtype=np.float64)
    return -(d / p[..., 2:3]) * p[..., :2]


def _grid_st(size: int, margin: int):
    c = (np.arange(size + 2 * margin, dtype=np.float64) - margin + 0.5) * 2.0 / size - 1.0
    t, s = np.meshgrid(c, c, indexing="ij")
    return s, t


def _st_to_pix(s, t, size, margin):
    return (s + 1.0) * size / 2.0 - 0.5 + margin, (t + 1.0) * size / 2.0 - 0.5 + margin


def _sample_footprint(img, px, py):
    # a face covers its pixels' full footprint, so the outer half pixel counts
    # as inside and is sampled with edge clamping
    h, w = img.shape[:2]
    vals, _ = sample_bilinear(img, px, py)
    inside = (px >= -0.5) & (px <= w - 0.5) & (py >= -0.5) & (py <= h - 0.5)
    return vals, inside


def face_directions(label: str, size: int, margin: int = 0) -> np.ndarray:
    """Unnormalised view directions ``(S+2m, S+2m, 3)`` of a (possibly extended) face."""
    n, u, r = face_basis(label)
    s, t = _grid_st(size, margin)
    return n + s[..., None] * r - t[..., None] * u


def face_coords(dirs, label: str):
    """Normalised ``(s, t)`` on ``label``'s plane and a front-facing mask."""
    n, u, r = face_basis(label)
    dirs = np.asarray(dirs, dtype=np.float64)
    cam = np.stack([dirs @ r, -(dirs @ u), -(dirs @ n)], axis=-1)
    front = cam[..., 2] < 0
    safe = np.where(front[..., None], cam, np.array([0.0, 0.0, -1.0]))
    y = pinhole_project(safe, 1.0)
    return y[..., 0], y[..., 1], front


def sample_face(img, label: str, dirs, margin: int = 0):
    """Sample a face image (extended by ``margin``) along ``dirs``; returns ``(values, valid)``."""
    img = as_image(img)
    size = img.shape[0] - 2 * margin
    s, t, front = face_coords(dirs, label)
    px, py = _st_to_pix(s, t, size, margin)
    vals, inside = _sample_footprint(img, px, py)
    return vals, inside & front


def _reproject_top(src, size, dst_margin, src_margin, d):
    # dst plane point (s, t) in the camera frame of the face across the top edge
    s, t = _grid_st(size, dst_margin)
    pts = d * np.stack([s, np.ones_like(s), np.minimum(t, -1e-12)], axis=-1)
    y = pinhole_project(pts, d) / d
    px, py = _st_to_pix(y[..., 0], y[..., 1], size, src_margin)
    vals, inside = _sample_footprint(src, px, py)
    return vals, inside & (t < 0)


def reproject_neighbour(src, edge: str, size: int, dst_margin: int, src_margin: int = 0,
                        d: float = 1.0):
    """Lay an unfolded neighbour face onto this face's extended plane.

    ``src`` is the neighbour as seen flat across ``edge`` (already rotated),
    extended by ``src_margin``.  Returns ``(values, valid)`` on the
    ``(S + 2 dst_margin)^2`` grid.
    """
    k = EDGES.index(edge)
    src = np.rot90(as_image(src), k)
    vals, valid = _reproject_top(src, size, dst_margin, src_margin, d)
    return np.rot90(vals, -k), np.rot90(valid, -k)


def _strip_slice(edge, size, overlap):
    full = slice(0, size + 2 * overlap)
    return {"top": (slice(0, overlap), full),
            "bottom": (slice(size + overlap, size + 2 * overlap), full),
            "left": (full, slice(0, overlap)),
            "right": (full, slice(size + overlap, size + 2 * overlap))}[edge]


def project_border(src_face, edge: str, overlap: int, d: float = 1.0):
    """Pinhole reprojection of a neighbour into the ``edge`` margin strip.

    ``src_face`` is the unfolded neighbour (S x S).  Returns ``(strip,
    valid)``: ``overlap x (S + 2 overlap)`` for top/bottom, transposed shape
    for left/right.  Corner parts of the strip that the neighbour does not
    cover are invalid.
    """
    src_face = as_image(src_face)
    size = src_face.shape[0]
    vals, valid = reproject_neighbour(src_face, edge, size, overlap, 0, d)
    sl = _strip_slice(edge, size, overlap)
    return vals[sl], valid[sl]


def unfolded(img, nb: Neighbour):
    return np.rot90(as_image(img), -nb.rotation)


def extend_face(cube: CubeFaceSet, label: str, overlap: int | None = None) -> np.ndarray:
    """Face ``label`` enlarged by ``overlap`` px of reprojected neighbour content."""
    m = cube.overlap if overlap is None else overlap
    size = cube.size
    check_adjacency()
    out = np.zeros((size + 2 * m, size + 2 * m, cube.faces[label].shape[2]))
    filled = np.zeros(out.shape[:2], dtype=bool)
    out[m:m + size, m:m + size] = cube.faces[label]
    filled[m:m + size, m:m + size] = True
    if m == 0:
        return out
    for nb in ADJACENCY[label]:
        strip, valid = project_border(unfolded(cube.faces[nb.label], nb), nb.edge, m)
        sl = _strip_slice(nb.edge, size, m)
        take = valid & ~filled[sl]
        out[sl][take] = strip[take]
        filled[sl] |= take
    if not filled.all():
        raise ValueError("extended face has uncovered pixels")
    return out


def crop_face(ext, overlap: int) -> np.ndarray:
    if overlap == 0:
        return np.array(ext)
    return np.array(ext[overlap:-overlap, overlap:-overlap])


@dataclass
class FacePrior:
    """Prior image on the extended grid, its validity mask and the fill used elsewhere."""

    prior: np.ndarray
    mask: WeightMap
    fill_policy: str = "zeros"
    sources: list = field(default_factory=list)


def _fill(shape, policy, seed):
    if policy == "zeros":
        return np.zeros(shape)
    if policy == "seeded_noise":
        return random_init(shape, seed)
    raise ValueError(f"fill policy must be one of {FILL_POLICIES}, got {policy!r}")


def build_face_prior(face_index: int, stylized_so_far: dict, order=DEFAULT_ORDER,
                     fill_policy: str = "zeros", size: int | None = None,
                     overlap: int = DEFAULT_OVERLAP, seed: int = 0) -> FacePrior:
    """Prior for the ``face_index``-th face of ``order`` from earlier stylised faces.

    ``stylized_so_far`` maps labels to stylised *extended* faces.  Every
    earlier adjacent face contributes the part of its extended image that
    overlaps this face's extended plane: this face's margin strip plus an
    inner band of ``overlap * S / (S + 2 overlap)`` px.  Where several faces
    overlap, the one stylised first wins.
    """
    if not 0 <= face_index < len(order):
        raise IndexError(f"face_index {face_index} out of range for order of {len(order)}")
    label = order[face_index]
    earlier = [lab for lab in order[:face_index] if lab in stylized_so_far]
    if size is None:
        if not earlier:
            raise ValueError("size is required when no face is stylised yet")
        size = stylized_so_far[earlier[0]].shape[0] - 2 * overlap
    ext = size + 2 * overlap
    prior = _fill((ext, ext, 3), fill_policy, seed)
    mask = np.zeros((ext, ext), dtype=bool)
    sources = []
    for lab in earlier:
        nb = next((n for n in ADJACENCY[label] if n.label == lab), None)
        if nb is None:
            continue
        vals, valid = reproject_neighbour(unfolded(stylized_so_far[lab], nb), nb.edge,
                                          size, overlap, overlap)
        take = valid & ~mask
        prior[take] = vals[take]
        mask |= take
        sources.append(lab)
    return FacePrior(prior, WeightMap(mask.astype(np.float64)), fill_policy, sources)


@dataclass
class SphereResult:
    cube: CubeFaceSet
    extended: dict
    priors: dict
    traces: dict


def _solve_face(extractor, content, grams, weights, solver_cfg, prior, mask, x0):
    terms = [(prior, mask)] if weights.gamma > 0 and mask.weights.any() else []
    energy = FrameEnergy(extractor, content, grams, weights, terms)
    x, trace = minimize(energy, x0, solver_cfg)
    return np.clip(x, 0.0, 1.0), trace


def stylize_sphere(cube: CubeFaceSet, style, weights: LossWeights | None = None,
                   solver_cfg: SolverConfig | None = None, order=DEFAULT_ORDER,
                   fill_policy: str = "zeros", extractor: FeatureExtractor | None = None,
                   seed: int = 0) -> SphereResult:
    """Stylise extended faces in ``order`` with border priors from earlier faces.

    The temporal term is reused as a prior term ``L_temporal(x, prior, mask)``.
    With ``gamma > 0`` the initialisation takes the prior on its mask and
    noise elsewhere; with ``gamma = 0`` every face starts from its own noise
    and is independent of the others.
    """
    weights = weights or LossWeights()
    solver_cfg = solver_cfg or SolverConfig()
    extractor = extractor or FeatureExtractor()
    if sorted(order) != sorted(FACE_LABELS):
        raise ValueError(f"order must be a permutation of {FACE_LABELS}")
    m, size = cube.overlap, cube.size
    grams = extractor.style_targets(as_image(style), (size + 2 * m, size + 2 * m))
    ext_out, priors, traces = {}, {}, {}
    for k, label in enumerate(order):
        content = extend_face(cube, label)
        prior = build_face_prior(k, ext_out, order, fill_policy, size, m, seed + 100 + k)
        x0 = random_init(content.shape, seed + k)
        if weights.gamma > 0:
            w = prior.mask.weights[..., None]
            x0 = w * prior.prior + (1 - w) * x0
        ext_out[label], traces[label] = _solve_face(extractor, content, grams, weights,
                                                    solver_cfg, prior.prior, prior.mask, x0)
        priors[label] = prior
        log.info("face %s: %d iterations, prior from %s", label, traces[label].iterations,
                 prior.sources)
    faces = {lab: crop_face(ext_out[lab], m) for lab in FACE_LABELS}
    return SphereResult(CubeFaceSet(faces, m), ext_out, priors, traces)


def stylize_sphere_video(cube_sequence, per_face_flows: dict, style,
                         weights: LossWeights | None = None,
                         solver_cfg: SolverConfig | None = None, order=DEFAULT_ORDER,
                         fill_policy: str = "zeros",
                         extractor: FeatureExtractor | None = None, seed: int = 0):
    """Stylise a sequence of cubes; returns a list of :class:`SphereResult`.

    ``per_face_flows[(t, label)] = (fwd, bwd)`` holds the flows ``t-1 -> t``
    and ``t -> t-1`` on the extended face grid, for every ``t >= 1``.  Frame 0
    uses border priors only.  Later frames start from the previous stylised
    face warped by ``bwd``; the prior is that warp where its short-term weight
    is 1, overwritten by neighbour borders where their mask is 1, and the
    mask is the union of both.
    """
    weights = weights or LossWeights()
    solver_cfg = solver_cfg or SolverConfig()
    extractor = extractor or FeatureExtractor()
    missing = [(t, lab) for t in range(1, len(cube_sequence)) for lab in FACE_LABELS
               if (t, lab) not in per_face_flows]
    if missing:
        raise KeyError(f"missing flows for (frame, face) {missing}")
    results = [stylize_sphere(cube_sequence[0], style, weights, solver_cfg, order,
                              fill_policy, extractor, seed)]
    for t in range(1, len(cube_sequence)):
        cube = cube_sequence[t]
        m, size = cube.overlap, cube.size
        grams = extractor.style_targets(as_image(style), (size + 2 * m, size + 2 * m))
        prev = results[-1].extended
        ext_out, priors, traces = {}, {}, {}
        for k, label in enumerate(order):
            fwd, bwd = per_face_flows[(t, label)]
            warped, inside = warp_image(prev[label], bwd)
            c = shortterm_weights(fwd, bwd).weights * inside.weights
            border = build_face_prior(k, ext_out, order, fill_policy, size, m,
                                      seed + 100 * t + k)
            bm = border.mask.weights > 0
            prior_img = np.where(bm[..., None], border.prior, warped)
            mask = np.where(bm, 1.0, c)
            prior = FacePrior(prior_img, WeightMap(mask), fill_policy,
                              border.sources + ["flow"])
            x0 = np.where(bm[..., None], border.prior, warped)
            content = extend_face(cube, label)
            ext_out[label], traces[label] = _solve_face(extractor, content, grams, weights,
                                                        solver_cfg, prior_img, prior.mask, x0)
            priors[label] = prior
        faces = {lab: crop_face(ext_out[lab], m) for lab in FACE_LABELS}
        results.append(SphereResult(CubeFaceSet(faces, m), ext_out, priors, traces))
    return results


def static_face_flows(frames: int, size: int, overlap: int) -> dict:
    """Zero flows for every face and frame pair of a static spherical video."""
    ext = size + 2 * overlap
    zero = np.zeros((ext, ext, 2))
    return {(t, lab): (FlowField(zero, "forward"), FlowField(zero, "backward"))
            for t in range(1, frames) for lab in FACE_LABELS}


def cube_from_function(fn, size: int, overlap: int = DEFAULT_OVERLAP) -> CubeFaceSet:
    """Cube whose pixels are ``fn(unit_directions)`` (``(..., 3) -> (..., C)``)."""
    faces = {}
    for lab in FACE_LABELS:
        d = face_directions(lab, size)
        faces[lab] = fn(d / np.linalg.norm(d, axis=-1, keepdims=True))
    return CubeFaceSet(faces, overlap)


def equirect_directions(height: int, width: int) -> np.ndarray:
    lat = np.pi / 2 - np.pi * (np.arange(height) + 0.5) / height
    lon = 2 * np.pi * (np.arange(width) + 0.5) / width - np.pi
    lon, lat = np.meshgrid(lon, lat)
    return np.stack([np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)], axis=-1)


def sample_equirect(eq, dirs) -> np.ndarray:
    eq = as_image(eq)
    h, w = eq.shape[:2]
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    lon = np.arctan2(dirs[..., 0], dirs[..., 2])
    lat = np.arcsin(np.clip(dirs[..., 1], -1.0, 1.0))
    wrap = np.concatenate([eq[:, -1:], eq, eq[:, :1]], axis=1)
    x = (lon + np.pi) / (2 * np.pi) * w - 0.5 + 1.0
    y = (np.pi / 2 - lat) / np.pi * h - 0.5
    return sample_bilinear(wrap, x, y)[0]


def equirect_to_cube(eq, size: int, overlap: int = DEFAULT_OVERLAP) -> CubeFaceSet:
    return CubeFaceSet({lab: sample_equirect(eq, face_directions(lab, size))
                        for lab in FACE_LABELS}, overlap)


def cube_to_equirect(cube: CubeFaceSet, height: int) -> np.ndarray:
    dirs = equirect_directions(height, 2 * height)
    dominant = np.argmax(np.abs(dirs), axis=-1)
    out = np.zeros(dirs.shape[:2] + (cube.faces["+Z"].shape[2],))
    for lab in FACE_LABELS:
        n = face_basis(lab)[0]
        axis = int(np.argmax(np.abs(n)))
        sel = (dominant == axis) & (dirs[..., axis] * n[axis] > 0)
        vals, _ = sample_face(cube.faces[lab], lab, dirs[sel])
        out[sel] = vals
    return out
