"""Seeded regression task families and their out-of-distribution sweeps.

A task is a small noise-free dataset: K support points to adapt on, a held-out
query set to judge with, and the descriptor (the true function parameters)
that generated both.  Every sampled value is range-checked on the way out —
a draw that escapes its declared interval is a bug, not a statistic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Task", "TaskRanges", "rng_stream",
    "sample_sinusoid", "sample_polynomial", "ood_sweep",
    "dump_tasks", "load_tasks",
]


@dataclass(frozen=True)
class TaskRanges:
    """Sampling intervals and dataset sizes for the sinusoid family."""

    amplitude: tuple = (0.1, 5.0)
    phase: tuple = (0.0, math.pi)
    inputs: tuple = (-5.0, 5.0)
    k_support: int = 5
    k_query: int = 100

    def __post_init__(self):
        for name in ("amplitude", "phase", "inputs"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} interval [{lo}, {hi}] is inverted")
        if self.k_support < 1 or self.k_query < 1:
            raise ValueError("support and query sizes must be at least 1")


@dataclass(frozen=True)
class Task:
    """One regression problem: support set, query set, generating descriptor."""

    family: str
    descriptor: np.ndarray
    x_support: np.ndarray  # (K, 1)
    y_support: np.ndarray  # (K, d_y)
    x_query: np.ndarray    # (Q, 1)
    y_query: np.ndarray    # (Q, d_y)


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream); safe to hand out per worker."""
    return np.random.default_rng([seed, stream])


def _uniform_checked(rng, lo, hi, size=None):
    v = rng.uniform(lo, hi, size)
    if np.any(v < lo) or np.any(v > hi):
        raise AssertionError(f"draw escaped [{lo}, {hi}]: {v!r}")
    return v


def sample_sinusoid(rng: np.random.Generator, ranges: TaskRanges = TaskRanges()) -> Task:
    """Draw y = A·sin(x + γ) with A, γ, and all x uniform over their ranges."""
    amp = float(_uniform_checked(rng, *ranges.amplitude))
    phase = float(_uniform_checked(rng, *ranges.phase))
    xs = _uniform_checked(rng, *ranges.inputs, size=(ranges.k_support, 1))
    xq = _uniform_checked(rng, *ranges.inputs, size=(ranges.k_query, 1))
    f = lambda x: amp * np.sin(x + phase)
    return Task("sinusoid", np.array([amp, phase]), xs, f(xs), xq, f(xq))


def sample_polynomial(rng: np.random.Generator, k_support: int = 40,
                      k_query: int = 100, inputs=(-3.0, 3.0)) -> Task:
    """Draw a cubic with coefficients U(−1, 1); support inputs are distinct.

    The descriptor is [c3, c2, c1, c0], highest degree first.
    """
    coeffs = _uniform_checked(rng, -1.0, 1.0, size=4)
    xs = _uniform_checked(rng, *inputs, size=(k_support, 1))
    # exact collisions would make the K-shot dataset degenerate; redraw them
    while len(np.unique(xs)) != k_support:
        xs = _uniform_checked(rng, *inputs, size=(k_support, 1))
    xq = _uniform_checked(rng, *inputs, size=(k_query, 1))
    f = lambda x: np.polyval(coeffs, x)
    return Task("polynomial", coeffs.copy(), xs, f(xs), xq, f(xq))


def ood_sweep(axis: str, grid, base: TaskRanges = TaskRanges()):
    """Task ranges stepping from in-distribution out along one axis.

    For each grid value g: while g is inside the in-distribution interval the
    ranges are unchanged; past it, sampling is restricted to the newly
    extrapolated band [in-dist upper, g], so successive entries measure
    increasingly far extrapolation rather than a mixture.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("ood_sweep needs a non-empty grid")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"grid must be non-decreasing, got {grid}")
    if axis not in ("amplitude", "phase"):
        raise ValueError(f"unknown sweep axis {axis!r} (have amplitude, phase)")
    lo, hi = getattr(base, axis)
    out = []
    for g in grid:
        interval = (lo, hi) if g <= hi else (hi, g)
        out.append(TaskRanges(**{**_ranges_fields(base), axis: interval}))
    return out


def _ranges_fields(r: TaskRanges) -> dict:
    return {"amplitude": r.amplitude, "phase": r.phase, "inputs": r.inputs,
            "k_support": r.k_support, "k_query": r.k_query}


# -- reproducibility dumps -----------------------------------------------------

def dump_tasks(path, tasks) -> None:
    """One JSON record per line; floats serialize with exact round-trip repr."""
    with open(path, "w") as fh:
        for t in tasks:
            rec = {
                "family": t.family,
                "descriptor": t.descriptor.tolist(),
                "support": np.concatenate([t.x_support, t.y_support], axis=1).tolist(),
                "query": np.concatenate([t.x_query, t.y_query], axis=1).tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def load_tasks(path):
    """Inverse of :func:`dump_tasks`."""
    tasks = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            sup = np.asarray(rec["support"], dtype=np.float64)
            qry = np.asarray(rec["query"], dtype=np.float64)
            d_y = sup.shape[1] - 1
            tasks.append(Task(
                rec["family"], np.asarray(rec["descriptor"], dtype=np.float64),
                sup[:, :1], sup[:, 1:1 + d_y], qry[:, :1], qry[:, 1:1 + d_y]))
    return tasks
