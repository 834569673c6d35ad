"""Exact optimal transport between equal-size empirical distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

MAX_SAMPLES = 512


@dataclass(frozen=True)
class EmpiricalDistribution:
    """``n`` equally weighted points in ``R^d``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or len(s) < 1:
            raise ValueError("need a non-empty (n, d) sample matrix")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return len(self.samples)


def linear_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact minimum-cost assignment; ``(rows, cols)`` sorted by row.

    Rectangular matrices assign every row (or column, if fewer) exactly once.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    rows, cols = linear_sum_assignment(cost)
    return rows.astype(np.int64), cols.astype(np.int64)


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assignment_cost(cost: np.ndarray, cols: np.ndarray) -> float:
    return float(cost[np.arange(len(cols)), cols].sum())


def w2_exact(p, q) -> float:
    """Exact 2-Wasserstein distance between equal-size empirical sets."""
    p = p if isinstance(p, EmpiricalDistribution) else EmpiricalDistribution(p)
    q = q if isinstance(q, EmpiricalDistribution) else EmpiricalDistribution(q)
    if p.n != q.n:
        raise ValueError(f"w2_exact needs equal sample counts, got {p.n} and {q.n}")
    if p.n > MAX_SAMPLES:
        raise ValueError(f"w2_exact is capped at {MAX_SAMPLES} samples, got {p.n}")
    if p.samples.shape[1] != q.samples.shape[1]:
        raise ValueError("sample dimensions differ")
    cost = squared_distances(p.samples, q.samples)
    _, cols = linear_assignment(cost)
    return float(np.sqrt(max(assignment_cost(cost, cols), 0.0) / p.n))


def coupling_rms(a: np.ndarray, b: np.ndarray) -> float:
    """Root mean squared distance of row-paired samples (the identity coupling)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))
