"""Per-agent twin critics combined by an average mixer.

Each agent ``i`` owns two online networks ``Q_i1, Q_i2`` on ``[o_i, a_i]``
plus Polyak-averaged targets. The team value is the arithmetic mean of the
per-agent values, so per-agent greedy actions are greedy for the team value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .flow import _slices
from .nn import MlpParams, init_mlp, mlp_forward, polyak_update
from .nn import autodiff as ad

PairSampler = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class CriticEnsemble:
    online: tuple  # per agent: (MlpParams, MlpParams)
    target: tuple
    obs_dims: tuple[int, ...]
    act_dims: tuple[int, ...]
    gamma: float = 0.995
    tau: float = 0.005
    reduction: str = "mean"

    def __post_init__(self):
        if self.reduction not in ("mean", "min"):
            raise ValueError(f"unknown twin reduction {self.reduction!r}")
        if len(self.online) != len(self.obs_dims) or len(self.target) != len(self.obs_dims):
            raise ValueError("need one twin pair per agent for online and target nets")
        for pair in (*self.online, *self.target):
            for net in pair:
                if not net.layer_norm:
                    raise ValueError("critic networks must use layer normalization")

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        obs_dims: Sequence[int],
        act_dims: Sequence[int],
        hidden: Sequence[int] = (64, 64),
        gamma: float = 0.995,
        tau: float = 0.005,
        reduction: str = "mean",
    ) -> CriticEnsemble:
        online = tuple(
            tuple(init_mlp(rng, od + ad_, 1, hidden, layer_norm=True) for _ in range(2))
            for od, ad_ in zip(obs_dims, act_dims)
        )
        target = tuple(tuple(net for net in pair) for pair in online)
        return cls(online, target, tuple(obs_dims), tuple(act_dims), gamma, tau, reduction)

    @property
    def n_agents(self) -> int:
        return len(self.obs_dims)

    def with_online(self, online) -> CriticEnsemble:
        return replace(self, online=tuple(tuple(p) for p in online))

    def update_targets(self) -> CriticEnsemble:
        return replace(self, target=polyak_update(self.target, self.online, self.tau))


def _reduce(ens: CriticEnsemble, q1: ad.Tensor, q2: ad.Tensor) -> ad.Tensor:
    if ens.reduction == "min":
        return ad.minimum(q1, q2)
    return (q1 + q2) * 0.5


def _twin_outputs(pair, o_i, a_i) -> tuple[ad.Tensor, ad.Tensor]:
    x = ad.concat([o_i, a_i], axis=-1)
    return mlp_forward(pair[0], x).reshape(-1), mlp_forward(pair[1], x).reshape(-1)


def q_value(ens: CriticEnsemble, i: int, o_i, a_i, nets=None) -> ad.Tensor:
    """Agent ``i``'s value, ``mean(Q_i1, Q_i2)`` by default. Shape ``(B,)``."""
    pair = (nets if nets is not None else ens.online)[i]
    return _reduce(ens, *_twin_outputs(pair, o_i, a_i))


def q_tot(ens: CriticEnsemble, obs, actions, nets=None) -> ad.Tensor:
    """Average mixer over agents; ``obs``/``actions`` are joint concatenations."""
    obs_sl, act_sl = _slices(ens.obs_dims), _slices(ens.act_dims)
    obs = np.asarray(obs, dtype=np.float64)
    actions = ad.as_tensor(actions)
    total = None
    for i in range(ens.n_agents):
        q = q_value(ens, i, obs[:, obs_sl[i]], actions[:, act_sl[i]], nets)
        total = q if total is None else total + q
    return total / float(ens.n_agents)


def td_targets(ens: CriticEnsemble, rewards, next_obs, next_actions, terminals) -> np.ndarray:
    """``r_i + gamma * (1 - done) * Qbar_i(o_i', a_i')`` per agent, shape ``(B, I)``."""
    if terminals is None:
        raise ValueError("terminal flags are required for TD targets")
    rewards = np.asarray(rewards, dtype=np.float64)
    not_done = 1.0 - np.asarray(terminals, dtype=np.float64).reshape(-1)
    obs_sl, act_sl = _slices(ens.obs_dims), _slices(ens.act_dims)
    next_obs = np.asarray(next_obs, dtype=np.float64)
    next_actions = np.asarray(next_actions, dtype=np.float64)
    cols = []
    for i in range(ens.n_agents):
        q_next = q_value(ens, i, next_obs[:, obs_sl[i]], next_actions[:, act_sl[i]], ens.target).data
        cols.append(rewards[:, i] + ens.gamma * not_done * q_next)
    return np.stack(cols, axis=1)


def critic_loss(ens: CriticEnsemble, batch, next_actions, nets=None) -> ad.Tensor:
    """Mean squared TD residual over batch, agents and both twins.

    ``batch`` needs ``obs``, ``act`` (flow space), ``rew`` ``(B, I)``,
    ``next_obs`` and ``term``. Targets come from the target networks and are
    constants for differentiation.
    """
    term = getattr(batch, "term", None)
    y = td_targets(ens, batch.rew, batch.next_obs, next_actions, term)
    nets = nets if nets is not None else ens.online
    obs_sl, act_sl = _slices(ens.obs_dims), _slices(ens.act_dims)
    obs = np.asarray(batch.obs, dtype=np.float64)
    act = np.asarray(batch.act, dtype=np.float64)
    total = None
    for i in range(ens.n_agents):
        q1, q2 = _twin_outputs(nets[i], obs[:, obs_sl[i]], act[:, act_sl[i]])
        yi = y[:, i]
        term_i = ad.square(q1 - yi).mean() + ad.square(q2 - yi).mean()
        total = term_i if total is None else total + term_i
    return total / float(2 * ens.n_agents)


def lipschitz_ratios(ens: CriticEnsemble, obs, a, y, min_dist: float = 1e-9) -> np.ndarray:
    """``|Q_tot(o, a) - Q_tot(o, y)| / ||a - y||`` for each row; NaN if too close."""
    qa = q_tot(ens, obs, a).data
    qy = q_tot(ens, obs, y).data
    dist = np.linalg.norm(np.asarray(a) - np.asarray(y), axis=-1)
    out = np.full(len(dist), np.nan)
    ok = dist >= min_dist
    out[ok] = np.abs(qa[ok] - qy[ok]) / dist[ok]
    return out


def estimate_lipschitz(
    ens: CriticEnsemble,
    sampler: PairSampler,
    pair_count: int,
    rng: np.random.Generator,
) -> float:
    """Largest finite-difference slope of Q_tot over sampled action pairs.

    ``sampler(rng, n)`` returns ``(obs, a, y)`` with one observation per pair;
    both actions of a pair are evaluated at that observation.
    """
    if pair_count < 1:
        raise ValueError("pair_count must be >= 1")
    obs, a, y = sampler(rng, pair_count)
    ratios = lipschitz_ratios(ens, obs, a, y)
    if np.all(np.isnan(ratios)):
        raise ValueError("no action pair was separated by more than 1e-9")
    return float(np.nanmax(ratios))
