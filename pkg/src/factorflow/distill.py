"""Decentralized one-step policies distilled from the joint flow.

Each agent's network maps ``[o_i, z_i]`` to an action (continuous) or to
logits (discrete) in a single evaluation. Training pairs every agent's output
with the matching sub-vector of the joint flow sample drawn from the *same*
noise ``z``, and adds a team-value term from the critics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .critic import CriticEnsemble, estimate_lipschitz, q_tot, q_value
from .flow import ActionSpace, JointFlowPolicy, _slices, decode_discrete, euler_sample, sample_noise
from .metrics.ot import MAX_SAMPLES, coupling_rms, w2_exact
from .nn import MlpParams, init_mlp, mlp_forward
from .nn import autodiff as ad


@dataclass(frozen=True)
class OneStepPolicySet:
    nets: tuple[MlpParams, ...]
    obs_dims: tuple[int, ...]
    action_space: ActionSpace
    alpha: float = 3.0

    def __post_init__(self):
        if len(self.nets) != len(self.obs_dims) or len(self.nets) != self.action_space.n_agents:
            raise ValueError("need one network per agent")
        for i, (net, od, d) in enumerate(zip(self.nets, self.obs_dims, self.action_space.dims)):
            if net.in_dim != od + d or net.out_dim != d:
                raise ValueError(f"agent {i}: network shape does not match obs/noise/action dims")

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        obs_dims: Sequence[int],
        action_space: ActionSpace,
        hidden: Sequence[int] = (64, 64),
        alpha: float = 3.0,
        layer_norm: bool = True,
    ) -> OneStepPolicySet:
        nets = tuple(
            init_mlp(rng, od + d, d, hidden, layer_norm=layer_norm)
            for od, d in zip(obs_dims, action_space.dims)
        )
        return cls(nets, tuple(int(d) for d in obs_dims), action_space, alpha)

    def with_nets(self, nets) -> OneStepPolicySet:
        return replace(self, nets=tuple(nets))

    @property
    def n_agents(self) -> int:
        return len(self.nets)


@dataclass(frozen=True)
class DistillBatchResult:
    distill_loss: float
    q_term: float
    total_actor_loss: float
    loss: ad.Tensor  # differentiable total_actor_loss


def policy_outputs(policies: OneStepPolicySet, obs, noise, nets=None) -> ad.Tensor:
    """Concatenated per-agent outputs ``[mu_1(o_1, z_1), ..., mu_I(o_I, z_I)]``."""
    nets = nets if nets is not None else policies.nets
    obs = np.asarray(obs, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    obs_sl = _slices(policies.obs_dims)
    act_sl = policies.action_space.slices()
    outs = [
        mlp_forward(nets[i], np.concatenate([obs[:, obs_sl[i]], noise[:, act_sl[i]]], axis=-1))
        for i in range(policies.n_agents)
    ]
    return ad.concat(outs, axis=-1)


def distill_loss(
    policies: OneStepPolicySet,
    flow: JointFlowPolicy,
    obs,
    rng: np.random.Generator | None = None,
    *,
    noise: np.ndarray | None = None,
    flow_actions: np.ndarray | None = None,
    nets=None,
) -> ad.Tensor:
    """Batch mean of ``sum_i ||mu_i(o_i, z_i) - [mu_flow(o, z)]_i||^2``.

    ``noise`` is shared by both sides; ``flow_actions`` may be supplied when the
    flow sample for that noise is already known.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if noise is None:
        noise = sample_noise(flow, len(obs), rng)
    if flow_actions is None:
        flow_actions = euler_sample(flow, obs, noise)
    out = policy_outputs(policies, obs, noise, nets)
    return ad.square(out - flow_actions).sum(axis=-1).mean()


def _expected_discrete_q(policies, critics, obs, logits: ad.Tensor, mode: str) -> ad.Tensor:
    """Team value of per-agent softmax policies over their logits."""
    act_sl = policies.action_space.slices()
    if critics.n_agents != policies.n_agents:
        return _expected_joint_q(policies, critics, obs, logits)
    obs_sl = _slices(policies.obs_dims)
    batch = len(obs)
    total = None
    for i in range(policies.n_agents):
        k = policies.action_space.dims[i]
        block = logits[:, act_sl[i]]
        probs = ad.softmax(block, axis=-1)
        o_i = obs[:, obs_sl[i]]
        if mode == "straight_through":
            hard = np.eye(k)[np.argmax(block.data, axis=-1)]
            a_i = probs + (hard - probs.data)
            q_i = q_value(critics, i, o_i, a_i)
        else:
            q_all = np.stack(
                [q_value(critics, i, o_i, np.tile(np.eye(k)[a], (batch, 1))).data for a in range(k)],
                axis=-1,
            )
            q_i = (probs * q_all).sum(axis=-1)
        total = q_i if total is None else total + q_i
    return total / float(policies.n_agents)


def _expected_joint_q(policies, critics, obs, logits: ad.Tensor) -> ad.Tensor:
    """Expected value of a single joint-input critic under the product of softmaxes."""
    dims = policies.action_space.dims
    act_sl = policies.action_space.slices()
    probs = [ad.softmax(logits[:, sl], axis=-1) for sl in act_sl]
    batch = len(obs)
    total = None
    for joint in itertools.product(*(range(k) for k in dims)):
        onehot = np.concatenate([np.eye(k)[a] for k, a in zip(dims, joint)])
        q = q_tot(critics, obs, np.tile(onehot, (batch, 1))).data
        weight = probs[0][:, joint[0]]
        for i in range(1, len(dims)):
            weight = weight * probs[i][:, joint[i]]
        total = weight * q if total is None else total + weight * q
    return total


def actor_loss(
    policies: OneStepPolicySet,
    flow: JointFlowPolicy,
    critics: CriticEnsemble,
    obs,
    rng: np.random.Generator | None = None,
    *,
    noise: np.ndarray | None = None,
    flow_actions: np.ndarray | None = None,
    nets=None,
    q_weight: float = 1.0,
    normalize_q: bool = False,
    discrete_q: str = "expected",
) -> DistillBatchResult:
    """``-q_term + alpha * distill_loss`` with shared noise.

    Continuous actions are reparameterized through the critics. Discrete
    agents use the expected per-agent value under ``softmax(logits)`` (or a
    straight-through one-hot with ``discrete_q="straight_through"``). Critic
    parameters are constants here. ``q_weight=0`` drops the value term.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if noise is None:
        noise = sample_noise(flow, len(obs), rng)
    if flow_actions is None:
        flow_actions = euler_sample(flow, obs, noise)
    out = policy_outputs(policies, obs, noise, nets)
    d_loss = ad.square(out - flow_actions).sum(axis=-1).mean()
    if q_weight == 0.0:
        q = ad.Tensor(0.0)
    else:
        if policies.action_space.discrete:
            values = _expected_discrete_q(policies, critics, obs, out, discrete_q)
        else:
            values = q_tot(critics, obs, out)
        q = values.mean()
        if normalize_q:
            q = q / max(float(np.mean(np.abs(values.data))), 1e-8)
        if q_weight != 1.0:
            q = q * q_weight
    total = -q + policies.alpha * d_loss
    return DistillBatchResult(float(d_loss.data), float(q.data), float(total.data), total)


def one_step_act(policies: OneStepPolicySet, i: int, o_i, rng: np.random.Generator, temperature: float = 0.0):
    """Agent ``i``'s action from exactly one network evaluation."""
    o_i = np.atleast_2d(np.asarray(o_i, dtype=np.float64))
    d = policies.action_space.dims[i]
    z_i = rng.standard_normal((len(o_i), d))
    out = mlp_forward(policies.nets[i], np.concatenate([o_i, z_i], axis=-1)).data
    if not policies.action_space.discrete:
        return out
    single = ActionSpace("discrete", (d,))
    return decode_discrete(out, single, temperature, rng)[:, 0]


def joint_one_step_actions(policies: OneStepPolicySet, obs, rng: np.random.Generator) -> np.ndarray:
    """Every agent acts on its own observation slice with independent noise."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    noise = rng.standard_normal((len(obs), policies.action_space.total_dim))
    return policy_outputs(policies, obs, noise).data


# ---------------------------------------------------------------- bound checks


def deployed_actions(action_space: ActionSpace, x: np.ndarray) -> np.ndarray:
    """Actions as the environment sees them, in flow space.

    Continuous outputs pass through; discrete outputs are replaced by the
    one-hot of their per-agent argmax.
    """
    if not action_space.discrete:
        return x
    return action_space.encode(decode_discrete(x, action_space))


def paired_samples(policies, flow, o, n: int, rng, noise=None, deploy: bool = False):
    """Actions of both policies at one joint observation, paired by shared noise."""
    o = np.asarray(o, dtype=np.float64).reshape(1, -1)
    obs = np.repeat(o, n, axis=0)
    z = sample_noise(flow, n, rng) if noise is None else noise
    a_w = policy_outputs(policies, obs, z).data
    a_phi = euler_sample(flow, obs, z)
    if deploy:
        a_w = deployed_actions(policies.action_space, a_w)
        a_phi = deployed_actions(flow.action_space, a_phi)
    return obs, a_w, a_phi


def policy_pair_sampler(policies, flow, obs_set, shared: list | None = None):
    """Action-pair sampler for Lipschitz estimation around both policies.

    Mixes (1) the caller's shared-noise pairs, (2) cross pairs of one-step and
    flow samples with independent noise, and (3) local perturbations of flow
    samples, all at observations from ``obs_set``.
    """
    obs_set = np.atleast_2d(np.asarray(obs_set, dtype=np.float64))

    def sampler(rng: np.random.Generator, n: int):
        parts = []
        if shared:
            for o_rep, a, y in shared:
                parts.append((o_rep, a, y))
        used = sum(len(p[0]) for p in parts)
        rest = max(n - used, 0)
        n_cross = rest // 2
        n_local = rest - n_cross
        if n_cross:
            obs = obs_set[rng.integers(len(obs_set), size=n_cross)]
            a = policy_outputs(policies, obs, sample_noise(flow, n_cross, rng)).data
            y = euler_sample(flow, obs, sample_noise(flow, n_cross, rng))
            parts.append((obs, a, y))
        if n_local:
            obs = obs_set[rng.integers(len(obs_set), size=n_local)]
            y = euler_sample(flow, obs, sample_noise(flow, n_local, rng))
            scale = rng.uniform(0.01, 0.5, size=(n_local, 1))
            a = y + scale * rng.standard_normal(y.shape)
            parts.append((obs, a, y))
        obs, a, y = (np.concatenate(c, axis=0)[:n] for c in zip(*parts))
        return obs, a, y

    return sampler


def verify_bounds(
    policies: OneStepPolicySet,
    flow: JointFlowPolicy,
    critics: CriticEnsemble | None,
    obs_set,
    sample_count: int,
    rng: np.random.Generator,
    tol: float = 0.10,
    lipschitz_pairs: int = 10_000,
    deploy: bool = False,
) -> dict:
    """Both bound checks from one set of draws.

    For each observation the exact W2 compares *independent* noise draws of
    the two policies. A third, shared draw gives the coupling distance, the
    Q-value gap and the pairs seeding the Lipschitz estimate, so the W2 check
    and the value-gap check use the same ``coupling_rms``. Per-observation
    squared distances are pooled as root-mean-square; gaps are averaged.
    """
    if sample_count > MAX_SAMPLES:
        raise ValueError(f"sample_count {sample_count} exceeds the exact-OT cap {MAX_SAMPLES}")
    obs_set = np.atleast_2d(np.asarray(obs_set, dtype=np.float64))
    w2_sq, coup_sq, gaps, shared = [], [], [], []
    for o in obs_set:
        _, a_w, _ = paired_samples(policies, flow, o, sample_count, rng, deploy=deploy)
        _, _, a_phi = paired_samples(policies, flow, o, sample_count, rng, deploy=deploy)
        w2_sq.append(w2_exact(a_w, a_phi) ** 2)
        obs, b_w, b_phi = paired_samples(policies, flow, o, sample_count, rng, deploy=deploy)
        coup_sq.append(coupling_rms(b_w, b_phi) ** 2)
        shared.append((obs, b_w, b_phi))
        if critics is not None:
            gap = q_tot(critics, obs, b_w).data.mean() - q_tot(critics, obs, b_phi).data.mean()
            gaps.append(abs(float(gap)))
    w2 = float(np.sqrt(np.mean(w2_sq)))
    coup = float(np.sqrt(np.mean(coup_sq)))
    out = {"w2_exact": w2, "coupling_rms": coup, "prop1_holds": bool(w2 <= coup * (1.0 + tol))}
    if critics is None:
        return out
    sampler = policy_pair_sampler(policies, flow, obs_set, shared)
    try:
        l_hat = estimate_lipschitz(critics, sampler, lipschitz_pairs, rng)
    except ValueError:  # every pair coincided, so the gap is zero too
        l_hat = 0.0
    gap = float(np.mean(gaps))
    bound = l_hat * coup
    out.update(
        value_gap=gap,
        L_hat=l_hat,
        bound=bound,
        prop2_holds=bool(gap <= bound * (1.0 + tol) + 1e-12),
    )
    return out


def verify_prop1(policies, flow, obs_set, sample_count, rng, tol=0.10, deploy=False) -> dict:
    """``{w2_exact, coupling_rms, holds}``: is W2 within the shared-noise coupling distance?"""
    r = verify_bounds(policies, flow, None, obs_set, sample_count, rng, tol, deploy=deploy)
    return {"w2_exact": r["w2_exact"], "coupling_rms": r["coupling_rms"], "holds": r["prop1_holds"]}


def verify_prop2(
    policies, flow, critics, obs_set, sample_count, rng, tol=0.10, lipschitz_pairs=10_000, deploy=False
) -> dict:
    """``{value_gap, bound, holds}`` for the Lipschitz value-gap bound, plus its inputs."""
    r = verify_bounds(policies, flow, critics, obs_set, sample_count, rng, tol, lipschitz_pairs, deploy)
    return {
        "value_gap": r["value_gap"],
        "bound": r["bound"],
        "L_hat": r["L_hat"],
        "coupling_rms": r["coupling_rms"],
        "holds": r["prop2_holds"],
    }
