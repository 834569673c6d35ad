"""Histogram plug-in mutual information."""

from __future__ import annotations

import numpy as np

DEFAULT_BINS = 16


def _codes(x: np.ndarray, bins: int, discrete: bool) -> np.ndarray | None:
    """Integer category per row; ``None`` if every row is identical."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    if discrete:
        _, codes = np.unique(x, axis=0, return_inverse=True)
        codes = codes.reshape(-1)
        return codes if codes.max() > 0 else None
    combined = np.zeros(len(x), dtype=np.int64)
    varied = False
    for col in x.T.astype(np.float64):
        lo, hi = col.min(), col.max()
        if hi > lo:
            varied = True
            idx = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
            idx = np.clip(idx, 0, bins - 1)
        else:
            idx = np.zeros(len(col), dtype=np.int64)
        combined = combined * bins + idx
    return combined if varied else None


def mutual_information(x, y, bins: int = DEFAULT_BINS, discrete: bool = False) -> float:
    """Plug-in estimate of MI(x; y) in nats.

    Continuous inputs are binned on equal-width grids spanning the empirical
    range of each dimension; discrete inputs use their exact categories.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ValueError("x and y need the same number of samples")
    if len(x) < 100:
        raise ValueError(f"need at least 100 samples, got {len(x)}")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    cx = _codes(x, bins, discrete)
    cy = _codes(y, bins, discrete)
    if cx is None or cy is None:
        return 0.0
    _, cx = np.unique(cx, return_inverse=True)
    _, cy = np.unique(cy, return_inverse=True)
    cx, cy = cx.reshape(-1), cy.reshape(-1)
    nx, ny = cx.max() + 1, cy.max() + 1
    joint = np.bincount(cx * ny + cy, minlength=nx * ny).reshape(nx, ny) / len(cx)
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


def pairwise_agent_mi(actions: np.ndarray, act_dims, bins: int = DEFAULT_BINS, discrete: bool = False) -> float:
    """Mean MI over agent pairs.

    For continuous agents each pair's value is the mean over coordinate pairs,
    which keeps histograms two-dimensional. Discrete agents pass
    ``actions`` as ``(n, I)`` indices.
    """
    actions = np.asarray(actions)
    n_agents = len(act_dims)
    if n_agents < 2:
        return 0.0
    values = []
    if discrete:
        for i in range(n_agents):
            for j in range(i + 1, n_agents):
                values.append(mutual_information(actions[:, i], actions[:, j], discrete=True))
        return float(np.mean(values))
    edges = np.concatenate([[0], np.cumsum(act_dims)])
    for i in range(n_agents):
        for j in range(i + 1, n_agents):
            pair = [
                mutual_information(actions[:, k], actions[:, l], bins)
                for k in range(edges[i], edges[i + 1])
                for l in range(edges[j], edges[j + 1])
            ]
            values.append(np.mean(pair))
    return float(np.mean(values))
