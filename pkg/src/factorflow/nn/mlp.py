"""MLP parameters, forward pass, parameter trees and gradients."""

from __future__ import annotations

import contextlib
import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {"gelu": ad.gelu, "relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class MlpParams:
    """Weights ``(in, out)``, biases, and per-hidden-layer norm gain/offset.

    ``ln_gains``/``ln_offsets`` are empty when layer norm is disabled. Leaves
    are numpy arrays normally and :class:`Tensor` leaves while a gradient is
    being traced.
    """

    weights: tuple
    biases: tuple
    ln_gains: tuple
    ln_offsets: tuple
    activation: str = "gelu"
    layer_norm: bool = True

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and equal in count")
        for k in range(1, len(self.weights)):
            if _shape(self.weights[k])[0] != _shape(self.weights[k - 1])[1]:
                raise ValueError(
                    f"layer {k} expects input {_shape(self.weights[k])[0]}, "
                    f"previous layer outputs {_shape(self.weights[k - 1])[1]}"
                )
        n_hidden = len(self.weights) - 1
        expected = n_hidden if self.layer_norm else 0
        if len(self.ln_gains) != expected or len(self.ln_offsets) != expected:
            raise ValueError(f"expected {expected} layer-norm gain/offset pairs")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return _shape(self.weights[0])[0]

    @property
    def out_dim(self) -> int:
        return _shape(self.weights[-1])[1]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(_shape(w)[1] for w in self.weights[:-1])

    def arrays(self) -> list:
        return [*self.weights, *self.biases, *self.ln_gains, *self.ln_offsets]

    def with_arrays(self, arrays: Sequence) -> MlpParams:
        n, h = len(self.weights), len(self.ln_gains)
        arrays = list(arrays)
        return dataclasses.replace(
            self,
            weights=tuple(arrays[:n]),
            biases=tuple(arrays[n : 2 * n]),
            ln_gains=tuple(arrays[2 * n : 2 * n + h]),
            ln_offsets=tuple(arrays[2 * n + h : 2 * n + 2 * h]),
        )


def _shape(x) -> tuple[int, ...]:
    return tuple(np.shape(x.data if isinstance(x, Tensor) else x))


def init_mlp(
    rng: np.random.Generator,
    in_dim: int,
    out_dim: int,
    hidden: Sequence[int] = (64, 64),
    layer_norm: bool = True,
    activation: str = "gelu",
) -> MlpParams:
    """Kaiming-uniform weights (fan-in), zero biases, unit gains."""
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = k == len(dims) - 2
        bound = math.sqrt(3.0 / fan_in) if last else math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    gains = tuple(np.ones(h) for h in hidden) if layer_norm else ()
    offsets = tuple(np.zeros(h) for h in hidden) if layer_norm else ()
    return MlpParams(tuple(weights), tuple(biases), gains, offsets, activation, layer_norm)


def zeros_like_mlp(params: MlpParams) -> MlpParams:
    return params.with_arrays([np.zeros(_shape(a)) for a in params.arrays()])


# ------------------------------------------------------------ evaluation count


class EvalCounter:
    """Counts network evaluations (NFE) made while it is active."""

    def __init__(self):
        self.count = 0


_ACTIVE_COUNTERS: list[EvalCounter] = []


@contextlib.contextmanager
def count_evaluations():
    counter = EvalCounter()
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


def mlp_forward(params: MlpParams, x) -> Tensor:
    """Apply the network to the last axis of ``x``.

    Hidden layers are ``act(layer_norm(x W + b))``; the output layer is linear.
    """
    traced = isinstance(x, Tensor) and x.requires_grad
    traced = traced or any(isinstance(leaf, Tensor) for leaf in params.arrays())
    x = ad.as_tensor(x)
    if x.shape[-1] != params.in_dim:
        raise ValueError(
            f"input last dimension mismatch: expected {params.in_dim}, got {x.shape[-1]}"
        )
    for counter in _ACTIVE_COUNTERS:
        counter.count += 1
    if not traced:
        return Tensor(_forward_numpy(params, x.data))
    act = ACTIVATIONS[params.activation]
    h = x
    n_hidden = len(params.weights) - 1
    for k in range(n_hidden):
        h = ad.matmul(h, params.weights[k]) + params.biases[k]
        if params.layer_norm:
            h = ad.layer_norm(h, params.ln_gains[k], params.ln_offsets[k])
        h = act(h)
    return ad.matmul(h, params.weights[-1]) + params.biases[-1]


def _forward_numpy(params: MlpParams, h: np.ndarray) -> np.ndarray:
    """Graph-free forward pass; same arithmetic, in the same order, as the traced one."""
    act = _NUMPY_ACTIVATIONS[params.activation]
    for k in range(len(params.weights) - 1):
        h = h @ params.weights[k] + params.biases[k]
        if params.layer_norm:
            mu = h.mean(axis=-1, keepdims=True)
            xc = h - mu
            inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + ad.LAYER_NORM_EPS)
            h = xc * inv * params.ln_gains[k] + params.ln_offsets[k]
        h = act(h)
    return h @ params.weights[-1] + params.biases[-1]


_NUMPY_ACTIVATIONS = {
    "gelu": lambda x: x * (0.5 * (1.0 + ad.erf(x * ad._SQRT1_2))),
    "relu": lambda x: x * (x > 0),
    "tanh": np.tanh,
}


# ---------------------------------------------------------------- param trees


def tree_leaves(tree) -> list:
    if isinstance(tree, MlpParams):
        return tree.arrays()
    if isinstance(tree, dict):
        return [leaf for key in sorted(tree) for leaf in tree_leaves(tree[key])]
    if isinstance(tree, (list, tuple)):
        return [leaf for item in tree for leaf in tree_leaves(item)]
    return [tree]


def tree_unflatten(template, leaves: Sequence):
    it = iter(leaves)

    def build(node):
        if isinstance(node, MlpParams):
            return node.with_arrays([next(it) for _ in node.arrays()])
        if isinstance(node, dict):
            return {key: build(node[key]) for key in sorted(node)}
        if isinstance(node, list):
            return [build(item) for item in node]
        if isinstance(node, tuple):
            return tuple(build(item) for item in node)
        return next(it)

    out = build(template)
    if next(it, None) is not None:
        raise ValueError("too many leaves for template")
    return out


def tree_map(fn: Callable, tree, *rest):
    leaves = tree_leaves(tree)
    others = [tree_leaves(r) for r in rest]
    for o in others:
        if len(o) != len(leaves):
            raise ValueError("parameter trees differ in structure")
        for a, b in zip(leaves, o):
            if np.shape(a) != np.shape(b):
                raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    return tree_unflatten(tree, [fn(*args) for args in zip(leaves, *others)])


def value_and_grad(loss_fn: Callable[[Any], Tensor], params) -> tuple[float, Any]:
    """Evaluate ``loss_fn(params)`` and its exact reverse-mode gradient.

    ``params`` may be any tree of MlpParams / dicts / lists / tuples of arrays;
    the gradient has the same structure.
    """
    leaves = [Tensor(np.array(leaf, dtype=np.float64), requires_grad=True) for leaf in tree_leaves(params)]
    loss = loss_fn(tree_unflatten(params, leaves))
    if not isinstance(loss, Tensor):
        loss = ad.as_tensor(loss)
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    ad.backward(loss)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    return float(loss.data), tree_unflatten(params, grads)


def grad(loss_fn: Callable[[Any], Tensor], params):
    return value_and_grad(loss_fn, params)[1]
