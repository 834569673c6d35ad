"""Offline joint-trajectory datasets, their generators and JSONL storage."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..flow import ActionSpace
from .landmark import LandmarkEnv, sample_landmarks, scripted_actions
from .matrix import MatrixGameEnv, matrix_observation

FORMAT_VERSION = 1


@dataclass(frozen=True)
class JointTrajectory:
    """``obs (T, I, d_obs)``, ``act (T, I, d_act)``, ``rew (T, I)``, ``term (T,)``.

    Discrete actions are stored as indices with ``d_act == 1``.
    """

    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    term: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.float64)
        act = np.asarray(self.act)
        act = act.astype(np.int64) if np.issubdtype(act.dtype, np.integer) else act.astype(np.float64)
        rew = np.asarray(self.rew, dtype=np.float64)
        term = np.asarray(self.term, dtype=bool).reshape(-1)
        if obs.ndim != 3 or act.ndim != 3 or rew.ndim != 2:
            raise ValueError("expected obs (T, I, d), act (T, I, d) and rew (T, I)")
        t, n = obs.shape[:2]
        if t < 1:
            raise ValueError("a trajectory needs at least one timestep")
        if act.shape[:2] != (t, n) or rew.shape != (t, n) or term.shape != (t,):
            raise ValueError("per-timestep, per-agent lengths disagree")
        for name, value in (("obs", obs), ("act", act), ("rew", rew)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "term", term)

    @property
    def length(self) -> int:
        return len(self.term)

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]


@dataclass
class OfflineDataset:
    trajectories: list
    env: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trajectories:
            first = self.trajectories[0]
            for k, traj in enumerate(self.trajectories):
                if traj.obs.shape[1:] != first.obs.shape[1:] or traj.act.shape[1:] != first.act.shape[1:]:
                    raise ValueError(f"trajectory {k} has shapes inconsistent with trajectory 0")

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace.from_dict(self.env["action"])

    @property
    def n_agents(self) -> int:
        return int(self.env["n_agents"])

    @property
    def obs_dims(self) -> tuple[int, ...]:
        return (int(self.env["obs_dim"]),) * self.n_agents

    def transitions(self) -> TransitionBatch:
        return to_transitions(self)


@dataclass(frozen=True)
class TransitionBatch:
    """Flat transitions with joint observations and flow-space joint actions."""

    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    term: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)

    def take(self, idx) -> TransitionBatch:
        return TransitionBatch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.term[idx])


def to_transitions(dataset: OfflineDataset) -> TransitionBatch:
    space = dataset.action_space
    obs, act, rew, nxt, term = [], [], [], [], []
    for traj in dataset.trajectories:
        t, n = traj.obs.shape[:2]
        joint = traj.obs.reshape(t, -1)
        obs.append(joint)
        # the final next-observation is only ever used behind a terminal mask
        nxt.append(np.concatenate([joint[1:], joint[-1:]], axis=0))
        act.append(space.encode(traj.act.reshape(t, -1)))
        rew.append(traj.rew)
        term.append(traj.term.astype(np.float64))
    cat = np.concatenate
    return TransitionBatch(cat(obs), cat(act), cat(rew), cat(nxt), cat(term))


def make_env(descriptor: dict):
    name = descriptor["name"]
    if name == "landmark":
        return LandmarkEnv(np.asarray(descriptor["landmarks"]), descriptor["horizon"], descriptor["step_cap"])
    return MatrixGameEnv(name, descriptor.get("zeta"))


# ------------------------------------------------------------------ generators


def gen_landmark_dataset(
    n_agents: int,
    episodes: int,
    rng: np.random.Generator,
    noise_std: float = 0.02,
    horizon: int = 25,
    step_cap: float = 0.2,
    landmarks=None,
    starts=None,
    seed=None,
) -> OfflineDataset:
    """Episodes of the assignment-following scripted team.

    Landmarks are drawn once from ``rng`` unless given. ``starts`` optionally
    fixes initial positions, shape ``(episodes, N, 2)``.
    """
    if n_agents < 1 or episodes < 1:
        raise ValueError("need at least one agent and one episode")
    if landmarks is None:
        landmarks = sample_landmarks(n_agents, rng)
    env = LandmarkEnv(landmarks, horizon, step_cap)
    trajs = []
    for ep in range(episodes):
        obs = env.reset(rng, None if starts is None else starts[ep])
        o_l, a_l, r_l, d_l = [], [], [], []
        done = False
        while not done:
            act = scripted_actions(env.positions, env.landmarks, step_cap, noise_std, rng)
            nxt, rew, done = env.step(act)
            o_l.append(obs)
            a_l.append(act)
            r_l.append(rew)
            d_l.append(done)
            obs = nxt
        trajs.append(JointTrajectory(np.stack(o_l), np.stack(a_l), np.stack(r_l), np.array(d_l)))
    meta = {"seed": seed, "policy": "scripted_assignment", "noise_std": noise_std}
    return OfflineDataset(trajs, env.descriptor(), meta)


def _matrix_dataset(env: MatrixGameEnv, joint_actions: np.ndarray, meta: dict) -> OfflineDataset:
    obs = matrix_observation(env.n_agents)
    team = env.team_reward(joint_actions)
    trajs = []
    for a, r in zip(joint_actions, team):
        act = np.asarray(a).reshape(1, env.n_agents, 1)
        rew = np.full((1, env.n_agents), r / env.n_agents)
        trajs.append(JointTrajectory(obs[None], act, rew, np.array([True])))
    return OfflineDataset(trajs, env.descriptor(), meta)


def gen_payoff_dataset(zeta: float, samples: int, rng: np.random.Generator, seed=None) -> OfflineDataset:
    """With probability zeta a diagonal pair (0,0)/(1,1), else (0,1)/(1,0)."""
    if not 0.0 <= zeta <= 1.0:
        raise ValueError("zeta must lie in [0, 1]")
    diagonal = rng.uniform(size=samples) < zeta
    first = rng.integers(0, 2, size=samples)
    second = np.where(diagonal, first, 1 - first)
    env = MatrixGameEnv("payoff_zeta", zeta)
    return _matrix_dataset(env, np.stack([first, second], axis=1), {"seed": seed, "zeta": zeta, "policy": "mixture"})


def gen_pure_coordination_dataset(
    samples: int, epsilon_rare: float, rng: np.random.Generator, seed=None
) -> OfflineDataset:
    """Mostly the mismatched modes; (0,0) and (1,1) share ``epsilon_rare``."""
    if not 0.0 < epsilon_rare < 0.5:
        raise ValueError("epsilon_rare must lie in (0, 0.5)")
    p = [epsilon_rare / 2, (1 - epsilon_rare) / 2, (1 - epsilon_rare) / 2, epsilon_rare / 2]
    code = rng.choice(4, size=samples, p=p)  # 0:(0,0) 1:(0,1) 2:(1,0) 3:(1,1)
    joint = np.stack([code // 2, code % 2], axis=1)
    env = MatrixGameEnv("pure_coordination")
    meta = {"seed": seed, "epsilon_rare": epsilon_rare, "policy": "mixture"}
    return _matrix_dataset(env, joint, meta)


def gen_xor_dataset(samples: int, mode_std: float, rng: np.random.Generator, seed=None) -> OfflineDataset:
    """Half the joint actions near (-1, +1), half near (+1, -1)."""
    if mode_std <= 0:
        raise ValueError("mode_std must be positive")
    sign = np.where(rng.uniform(size=samples) < 0.5, -1.0, 1.0)
    centers = np.stack([sign, -sign], axis=1)
    joint = centers + mode_std * rng.standard_normal((samples, 2))
    env = MatrixGameEnv("xor")
    meta = {"seed": seed, "mode_std": mode_std, "policy": "mixture"}
    return _matrix_dataset(env, joint, meta)


# ---------------------------------------------------------------------- JSONL


def save_dataset(dataset: OfflineDataset, path) -> None:
    if not dataset.trajectories:
        raise ValueError("refusing to save a dataset with no trajectories")
    header = {
        "version": FORMAT_VERSION,
        "env": dataset.env,
        "seed": dataset.meta.get("seed"),
        "zeta": dataset.env.get("zeta", dataset.meta.get("zeta")),
        "meta": dataset.meta,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for traj in dataset.trajectories:
            row = {
                "obs": traj.obs.tolist(),
                "act": traj.act.tolist(),
                "rew": traj.rew.tolist(),
                "term": traj.term.tolist(),
            }
            fh.write(json.dumps(row) + "\n")
    os.replace(tmp, path)


def load_dataset(path) -> OfflineDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line 1: malformed header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("version") != FORMAT_VERSION or "env" not in header:
        raise ValueError(f"{path}: line 1: missing or unsupported header")
    trajs = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            trajs.append(JointTrajectory(row["obs"], row["act"], row["rew"], row["term"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: line {lineno}: bad trajectory record ({exc})") from None
    if not trajs:
        raise ValueError(f"{path}: no trajectories after the header")
    meta = dict(header.get("meta") or {})
    meta.setdefault("seed", header.get("seed"))
    return OfflineDataset(trajs, header["env"], meta)
