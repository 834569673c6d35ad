"""Adam and Polyak averaging over parameter trees."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .mlp import tree_leaves, tree_map


@dataclass(frozen=True)
class AdamState:
    m: Any
    v: Any
    step: int = 0
    lr: float = 3e-4
    eps: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999


def adam_init(params, lr: float = 3e-4, eps: float = 1e-5, beta1: float = 0.9, beta2: float = 0.999) -> AdamState:
    zeros = tree_map(lambda p: np.zeros(np.shape(p)), params)
    return AdamState(zeros, tree_map(np.copy, zeros), 0, lr, eps, beta1, beta2)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    for k, g in enumerate(tree_leaves(grads)):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in leaf {k} (shape {np.shape(g)}) at Adam step {state.step + 1}"
            )
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    m = tree_map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, state.m, grads)
    v = tree_map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, state.v, grads)
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    lr, eps = state.lr, state.eps
    new_params = tree_map(
        lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), params, m, v
    )
    return new_params, replace(state, m=m, v=v, step=step)


def polyak_update(target, online, tau: float):
    """``(1 - tau) * target + tau * online`` leafwise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if tau == 1.0:
        return tree_map(lambda t, o: np.array(o, copy=True), target, online)
    # increment form: equal target and online stay bitwise equal
    return tree_map(lambda t, o: t + tau * (o - t), target, online)
