"""Small float64 neural-network core: autodiff, MLPs, Adam, Polyak targets."""

from . import autodiff
from .autodiff import Tensor, backward, concat, layer_norm, softmax, square
from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import (
    MlpParams,
    count_evaluations,
    grad,
    init_mlp,
    mlp_forward,
    tree_leaves,
    tree_map,
    tree_unflatten,
    value_and_grad,
    zeros_like_mlp,
)
from .optim import AdamState, adam_init, adam_step, polyak_update

__all__ = [
    "AdamState",
    "MlpParams",
    "Tensor",
    "adam_init",
    "adam_step",
    "autodiff",
    "backward",
    "concat",
    "count_evaluations",
    "grad",
    "init_mlp",
    "layer_norm",
    "load_checkpoint",
    "mlp_forward",
    "polyak_update",
    "save_checkpoint",
    "softmax",
    "square",
    "tree_leaves",
    "tree_map",
    "tree_unflatten",
    "value_and_grad",
    "zeros_like_mlp",
]
