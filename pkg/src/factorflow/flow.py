"""Flow-matching joint behavior cloning policy with an Euler sampler.

The velocity field sees ``[t, o_1..o_I, x_1..x_I]`` and predicts a velocity for
the whole joint action. Sampling integrates it from Gaussian noise with ``M``
uniform Euler steps, which gives the deterministic map ``(o, z) -> a``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .nn import MlpParams, init_mlp, mlp_forward
from .nn import autodiff as ad


@dataclass(frozen=True)
class ActionSpace:
    """Per-agent action layout.

    For ``continuous`` spaces ``dims`` are box dimensions. For ``discrete``
    spaces they are cardinalities, and actions live in one-hot blocks.
    """

    kind: str
    dims: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown action space kind {self.kind!r}")
        if not self.dims or min(self.dims) < 1:
            raise ValueError("every agent needs at least one action dimension")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def n_agents(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def slices(self) -> list[slice]:
        return _slices(self.dims)

    def encode(self, actions: np.ndarray) -> np.ndarray:
        """Map stored actions to flow space (one-hot blocks for discrete)."""
        actions = np.asarray(actions)
        if not self.discrete:
            return actions.astype(np.float64).reshape(len(actions), self.total_dim)
        idx = actions.reshape(len(actions), self.n_agents).astype(np.int64)
        out = np.zeros((len(idx), self.total_dim))
        for i, sl in enumerate(self.slices()):
            if np.any((idx[:, i] < 0) | (idx[:, i] >= self.dims[i])):
                raise ValueError(f"agent {i} action index out of range")
            out[np.arange(len(idx)), sl.start + idx[:, i]] = 1.0
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims)}

    @classmethod
    def from_dict(cls, d: dict) -> ActionSpace:
        return cls(d["kind"], tuple(d["dims"]))


def _slices(dims: Sequence[int]) -> list[slice]:
    edges = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class JointFlowPolicy:
    velocity: MlpParams
    obs_dims: tuple[int, ...]
    action_space: ActionSpace
    flow_steps: int = 10

    def __post_init__(self):
        if self.flow_steps < 1:
            raise ValueError("flow_steps must be >= 1")
        expected_in = 1 + sum(self.obs_dims) + self.action_space.total_dim
        if self.velocity.in_dim != expected_in:
            raise ValueError(f"velocity net input {self.velocity.in_dim} != {expected_in}")
        if self.velocity.out_dim != self.action_space.total_dim:
            raise ValueError("velocity net output must equal the joint action dimension")

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        obs_dims: Sequence[int],
        action_space: ActionSpace,
        hidden: Sequence[int] = (64, 64),
        flow_steps: int = 10,
        layer_norm: bool = True,
    ) -> JointFlowPolicy:
        obs_dims = tuple(int(d) for d in obs_dims)
        net = init_mlp(
            rng,
            1 + sum(obs_dims) + action_space.total_dim,
            action_space.total_dim,
            hidden,
            layer_norm=layer_norm,
        )
        return cls(net, obs_dims, action_space, flow_steps)

    def with_velocity(self, velocity: MlpParams) -> JointFlowPolicy:
        return replace(self, velocity=velocity)

    @property
    def noise_dims(self) -> tuple[int, ...]:
        return self.action_space.dims


def velocity(policy: JointFlowPolicy, t, obs, x) -> ad.Tensor:
    """``v(t, o, x)``; ``t`` is a scalar or a ``(B,)``/``(B, 1)`` array."""
    obs = np.asarray(obs, dtype=np.float64)
    x = ad.as_tensor(x)
    batch = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (batch, 1))
    return mlp_forward(policy.velocity, ad.concat([t, obs, x], axis=-1))


def sample_noise(policy: JointFlowPolicy, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Joint noise from the product of per-agent standard normals."""
    return rng.standard_normal((batch, policy.action_space.total_dim))


def flow_bc_loss(
    policy: JointFlowPolicy,
    obs: np.ndarray,
    actions: np.ndarray,
    rng: np.random.Generator | None = None,
    *,
    noise: np.ndarray | None = None,
    t: np.ndarray | None = None,
) -> ad.Tensor:
    """Mean squared residual ``||v(t, o, x_t) - (a - x_0)||^2`` over the batch.

    ``actions`` must already be in flow space (one-hot for discrete agents).
    ``noise`` and ``t`` are drawn from ``rng`` when not supplied.
    """
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if len(actions) == 0:
        raise ValueError("flow_bc_loss needs a non-empty batch")
    batch = len(actions)
    if noise is None:
        noise = sample_noise(policy, batch, rng)
    if t is None:
        t = rng.uniform(0.0, 1.0, size=(batch, 1))
    t = np.asarray(t, dtype=np.float64).reshape(batch, 1)
    x_t = (1.0 - t) * noise + t * actions
    target = actions - noise
    residual = velocity(policy, t, obs, x_t) - target
    return ad.square(residual).sum(axis=-1).mean()


def euler_sample(policy: JointFlowPolicy, obs, noise) -> np.ndarray:
    """Integrate the velocity field from ``noise`` with M steps of size 1/M."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != policy.action_space.total_dim:
        raise ValueError(
            f"noise dimension {noise.shape[-1]} != action dimension {policy.action_space.total_dim}"
        )
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = np.broadcast_to(obs, (len(noise), obs.shape[0]))
    d = 1.0 / policy.flow_steps
    x = noise.copy()
    t = 0.0
    for _ in range(policy.flow_steps):
        x = x + velocity(policy, t, obs, x).data * d
        t += d
    return x


def sample_joint_action(policy: JointFlowPolicy, obs, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``z ~ p0`` and return ``(mu(o, z), z)``."""
    obs = np.asarray(obs, dtype=np.float64)
    batch = 1 if obs.ndim == 1 else len(obs)
    z = sample_noise(policy, batch, rng)
    return euler_sample(policy, obs, z), z


def decode_discrete(
    x: np.ndarray,
    action_space: ActionSpace,
    temperature: float = 0.0,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Per-agent action indices from continuous one-hot-space vectors.

    ``temperature == 0`` takes the argmax of each block; otherwise samples from
    ``softmax(block / temperature)``. ``mask`` is a boolean array over the
    joint one-hot layout (``True`` = legal) applied before the softmax.
    """
    if not action_space.discrete:
        raise ValueError("decode_discrete requires a discrete action space")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.empty((len(x), action_space.n_agents), dtype=np.int64)
    for i, sl in enumerate(action_space.slices()):
        block = x[:, sl]
        if mask is not None:
            legal = mask[:, sl]
            if not np.all(legal.any(axis=1)):
                raise ValueError(f"agent {i}: every action is masked illegal")
            block = np.where(legal, block, -np.inf)
        if temperature <= 0.0:
            out[:, i] = np.argmax(block, axis=1)
            continue
        logits = block / temperature
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.uniform(size=(len(x), 1))
        out[:, i] = np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), block.shape[1] - 1)
    return out
