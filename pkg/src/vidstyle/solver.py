"""Limited-memory BFGS with a backtracking Armijo line search.

The stopping rule is windowed: stop once the best loss improved by less than
``convergence_rel_change`` (relative) over the last ``convergence_window``
iterations.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class NumericalFailure(RuntimeError):
    """Loss or gradient became non-finite during optimisation."""


@dataclass
class SolverConfig:
    max_iterations: int = 1000
    convergence_window: int = 50
    convergence_rel_change: float = 1e-4
    history_size: int = 10
    grad_tol: float = 1e-10
    armijo_c1: float = 1e-4
    max_backtracks: int = 40
    # first step (or after a memory reset) moves the largest component by this much
    initial_step: float = 0.1

    def __post_init__(self):
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")
        if self.convergence_rel_change <= 0:
            raise ValueError("convergence_rel_change must be > 0")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")


@dataclass
class Trace:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    evaluations: int = 0
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.losses) - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "grad_norm"])
            for i, (l, g) in enumerate(zip(self.losses, self.grad_norms)):
                w.writerow([i, repr(l), repr(g)])


def _two_loop(g, hist):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(hist):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = hist[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(hist, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def minimize(energy, x0, cfg: SolverConfig | None = None):
    """Minimise ``energy(x) -> (value, grad)`` starting at ``x0``.

    Returns ``(x, trace)``.  Accepted losses are strictly decreasing.
    """
    cfg = cfg or SolverConfig()
    shape = np.shape(x0)
    x = np.array(x0, dtype=np.float64).ravel()
    trace = Trace()

    def evaluate(v):
        f, g = energy(v.reshape(shape))
        trace.evaluations += 1
        g = np.asarray(g, dtype=np.float64).ravel()
        f = float(f)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericalFailure(f"non-finite loss/gradient at evaluation {trace.evaluations}")
        return f, g

    f, g = evaluate(x)
    trace.losses.append(f)
    trace.grad_norms.append(float(np.linalg.norm(g)))
    hist = deque(maxlen=cfg.history_size)

    for it in range(1, cfg.max_iterations + 1):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            trace.reason = "gradient"
            break
        accepted = False
        for attempt in range(2):
            if hist:
                d = _two_loop(g, hist)
                t = 1.0
            else:
                d = -g
                t = cfg.initial_step / np.max(np.abs(g))
            slope = np.dot(g, d)
            if slope >= 0:
                hist.clear()
                continue
            for _ in range(cfg.max_backtracks):
                x_new = x + t * d
                f_new, g_new = evaluate(x_new)
                if f_new <= f + cfg.armijo_c1 * t * slope and f_new < f:
                    accepted = True
                    break
                t *= 0.5
            if accepted or not hist:
                break
            hist.clear()
        if not accepted:
            trace.reason = "line_search"
            break
        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            hist.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        trace.losses.append(f)
        trace.grad_norms.append(float(np.linalg.norm(g)))
        if it >= cfg.convergence_window:
            old = trace.losses[it - cfg.convergence_window]
            if old - f <= cfg.convergence_rel_change * abs(old):
                trace.reason = "converged"
                break
    else:
        trace.reason = "max_iterations"
    return x.reshape(shape), trace
