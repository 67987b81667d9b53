"""Sequential video stylisation with flow-based initialisation and temporal losses."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import FrameEnergy, LossWeights
from .flow import longterm_weights, shortterm_weights, warp_image
from .imgcore import Sequence, as_image
from .perceptual import FeatureExtractor
from .solver import SolverConfig, minimize

log = logging.getLogger(__name__)

INIT_KINDS = ("random", "prev", "prev_warped")


@dataclass
class InitStrategy:
    """How frames after the first are initialised; the first is always noise."""

    kind: str = "prev_warped"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ValueError(f"init kind must be one of {INIT_KINDS}, got {self.kind!r}")


@dataclass
class LongTermConfig:
    offsets: tuple[int, ...] = (1,)

    def __post_init__(self):
        offs = tuple(int(j) for j in self.offsets)
        if not offs or any(j < 1 for j in offs) or len(set(offs)) != len(offs):
            raise ValueError("offsets must be distinct integers >= 1")
        self.offsets = tuple(sorted(offs))


def random_init(shape, seed: int) -> np.ndarray:
    """Gaussian noise around mid-grey (sigma 0.1), clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(0.5, 0.1, size=shape), 0.0, 1.0)


def temporal_targets(seq: Sequence, outputs: list, i: int, offsets):
    """Warped earlier outputs and long-term weights for frame ``i``.

    Only offsets with ``i - j >= 0`` are admissible.  Returns a list of
    ``(offset, warped, c_long)``.
    """
    admissible = [j for j in offsets if i - j >= 0]
    warped, shorts = [], []
    for j in admissible:
        fwd = seq.flow(i - j, i)
        bwd = seq.flow(i, i - j)
        warped.append(warp_image(outputs[i - j], bwd)[0])
        shorts.append(shortterm_weights(fwd, bwd))
    return list(zip(admissible, warped, longterm_weights(shorts)))


def check_flows(seq: Sequence, offsets) -> None:
    missing = [(i - j, i) for i in range(len(seq)) for j in offsets if i - j >= 0
               for pair in ((i - j, i), (i, i - j)) if pair not in seq.flows]
    if missing:
        raise KeyError(f"missing flows for frame pairs {sorted(set(missing))}")


def stylize_sequence(seq: Sequence, style, strategy: InitStrategy | None = None,
                     longterm: LongTermConfig | None = None,
                     weights: LossWeights | None = None,
                     solver_cfg: SolverConfig | None = None,
                     extractor: FeatureExtractor | None = None,
                     trace_dir=None):
    """Stylise frames in order; returns ``(frames, traces)``.

    Frame ``i`` is initialised per ``strategy`` and optimised against the
    content of ``seq.frames[i]``, the style Gram matrices and one temporal
    term per admissible long-term offset.  Outputs are clamped to [0, 1]
    and the clamped frames serve as temporal targets for later frames.
    """
    strategy = strategy or InitStrategy()
    longterm = longterm or LongTermConfig()
    weights = weights or LossWeights()
    solver_cfg = solver_cfg or SolverConfig()
    extractor = extractor or FeatureExtractor()
    check_flows(seq, longterm.offsets)
    grams = extractor.style_targets(as_image(style), as_image(seq.frames[0]).shape[:2])
    outputs, traces = [], []
    for i, frame in enumerate(seq.frames):
        frame = as_image(frame)
        terms = []
        if i == 0 or strategy.kind == "random":
            x0 = random_init(frame.shape, strategy.seed + i)
        elif strategy.kind == "prev":
            x0 = outputs[i - 1]
        else:
            x0 = warp_image(outputs[i - 1], seq.flow(i, i - 1))[0]
        if i > 0:
            terms = [(w, c) for _, w, c in temporal_targets(seq, outputs, i, longterm.offsets)]
        energy = FrameEnergy(extractor, frame, grams, weights, terms)
        x, trace = minimize(energy, x0, solver_cfg)
        log.info("frame %d: %d iterations, loss %.6g (%s)", i, trace.iterations,
                 trace.losses[-1], trace.reason)
        outputs.append(np.clip(x, 0.0, 1.0))
        traces.append(trace)
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            trace.to_csv(Path(trace_dir) / f"frame_{i:04d}.csv")
    return outputs, traces
