"""Multi-pass stylisation: alternating forward/backward sweeps with blended initialisation."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .energy import FrameEnergy, LossWeights
from .evaluation import sequence_temporal_errors
from .flow import shortterm_weights, warp_image
from .imgcore import Sequence, WeightMap, as_image, write_image
from .perceptual import FeatureExtractor
from .solver import SolverConfig, minimize
from .video import check_flows, random_init

log = logging.getLogger(__name__)


@dataclass
class MultiPassConfig:
    passes: int = 10
    iterations_per_pass: int = 100
    delta: float = 0.5
    temporal_loss_enabled_from_pass: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.iterations_per_pass < 1:
            raise ValueError("iterations_per_pass must be >= 1")


def pass_direction(j: int) -> str:
    """Direction of pass ``j`` (1-based); pass 1 is independent, then backward, forward, ..."""
    if j == 1:
        return "independent"
    return "backward" if j % 2 == 0 else "forward"


def multipass_init(direction: str, i: int, prev_pass_outputs, current_pass_neighbor, c,
                   delta: float) -> np.ndarray:
    """Blend the warped current-pass neighbour into the previous-pass frame.

    ``x' = delta c * w + (1 - delta + delta (1 - c)) * x_prev`` where ``w`` is
    ``current_pass_neighbor`` (already warped onto frame ``i``).  The first
    frame of a sweep (``i = 0`` forward, ``i = N-1`` backward) or a missing
    neighbour returns the previous-pass frame unchanged.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    x = as_image(prev_pass_outputs[i])
    start = 0 if direction == "forward" else len(prev_pass_outputs) - 1
    if i == start or current_pass_neighbor is None:
        return x.copy()
    w = as_image(current_pass_neighbor)
    if w.shape != x.shape:
        raise ValueError(f"dimension mismatch: {w.shape} vs {x.shape}")
    cw = c.weights if isinstance(c, WeightMap) else np.asarray(c, dtype=np.float64)
    if cw.shape != x.shape[:2]:
        raise ValueError(f"weight map {cw.shape} does not match image {x.shape[:2]}")
    cw = cw[..., None]
    return delta * cw * w + ((1.0 - delta) + delta * (1.0 - cw)) * x


@dataclass
class MultiPassResult:
    frames: list
    pass_errors: list = field(default_factory=list)
    directions: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def _neighbour_terms(seq, cur, i, k):
    # warp the current-pass frame k onto frame i; weights from the (k->i, i->k) pair
    warped = warp_image(cur[k], seq.flow(i, k))[0]
    c = shortterm_weights(seq.flow(k, i), seq.flow(i, k))
    return warped, c


def run_multipass(seq: Sequence, style, cfg: MultiPassConfig | None = None,
                  weights: LossWeights | None = None,
                  extractor: FeatureExtractor | None = None,
                  solver_cfg: SolverConfig | None = None, debug_dir=None,
                  workers: int = 1) -> MultiPassResult:
    """Run ``cfg.passes`` passes of ``cfg.iterations_per_pass`` iterations each.

    Pass 1 optimises every frame independently from noise.  Later passes
    alternate direction; each frame starts from :func:`multipass_init` and,
    from ``temporal_loss_enabled_from_pass`` on, carries a temporal term
    towards the warped neighbour processed just before it.  Frames are
    clamped to [0, 1] after every pass.  ``pass_errors[j]`` is the mean
    temporal error after pass ``j + 1``.
    """
    cfg = cfg or MultiPassConfig()
    weights = weights or LossWeights()
    extractor = extractor or FeatureExtractor()
    solver_cfg = replace(solver_cfg or SolverConfig(), max_iterations=cfg.iterations_per_pass)
    n = len(seq)
    if cfg.passes > 1:
        check_flows(seq, (1,))
    grams = extractor.style_targets(as_image(style), as_image(seq.frames[0]).shape[:2])
    contents = [as_image(f) for f in seq.frames]
    result = MultiPassResult([])

    def solve(i, x0, terms):
        energy = FrameEnergy(extractor, contents[i], grams, weights, terms)
        x, trace = minimize(energy, x0, solver_cfg)
        return np.clip(x, 0.0, 1.0), trace

    def first(i):
        return solve(i, random_init(contents[i].shape, cfg.seed + i), [])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(first, range(n)))
    else:
        done = [first(i) for i in range(n)]
    cur = [x for x, _ in done]
    _finish_pass(result, seq, cur, "independent", [t for _, t in done], debug_dir, 1)

    for j in range(2, cfg.passes + 1):
        direction = pass_direction(j)
        prev = list(cur)
        order = range(n) if direction == "forward" else range(n - 1, -1, -1)
        step = -1 if direction == "forward" else 1
        traces = [None] * n
        for i in order:
            k = i + step
            warped = c = None
            if 0 <= k < n and k != i:
                warped, c = _neighbour_terms(seq, cur, i, k)
            x0 = multipass_init(direction, i, prev, warped, c, cfg.delta)
            terms = []
            if warped is not None and j >= cfg.temporal_loss_enabled_from_pass:
                terms = [(warped, c)]
            cur[i], traces[i] = solve(i, x0, terms)
        _finish_pass(result, seq, cur, direction, traces, debug_dir, j)
    result.frames = cur
    return result


def _finish_pass(result, seq, frames, direction, traces, debug_dir, j):
    errs = sequence_temporal_errors(seq, frames) if len(frames) > 1 else []
    err = float(np.nanmean(errs)) if errs else 0.0
    result.pass_errors.append(err)
    result.directions.append(direction)
    result.traces.append(traces)
    log.info("pass %d (%s): mean temporal error %.6g", j, direction, err)
    if debug_dir is not None:
        d = Path(debug_dir) / f"pass_{j:02d}"
        d.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(frames):
            write_image(f, d / f"frame_{i:04d}.png")
