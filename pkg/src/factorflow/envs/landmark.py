"""Cooperative landmark covering in a 2-D box.

Every agent sees its own position and all landmark positions (never the other
agents). Rewards come from the minimum-total-distance matching of agents to
landmarks, recomputed from the current positions at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metrics.ot import linear_assignment

ARENA = 1.0


def _pairwise_distance(agents: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    return np.linalg.norm(agents[:, None, :] - landmarks[None, :, :], axis=-1)


def optimal_assignment(agents, landmarks) -> np.ndarray:
    """``assign[i]`` is the landmark index matched to agent ``i``."""
    agents = np.asarray(agents, dtype=np.float64).reshape(-1, 2)
    landmarks = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    if len(agents) != len(landmarks):
        raise ValueError(f"need as many landmarks as agents, got {len(landmarks)} for {len(agents)}")
    _, cols = linear_assignment(_pairwise_distance(agents, landmarks))
    return cols


def landmark_reward(agents, landmarks) -> np.ndarray:
    """Per-agent reward: minus the distance to the optimally matched landmark."""
    agents = np.asarray(agents, dtype=np.float64).reshape(-1, 2)
    landmarks = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    assign = optimal_assignment(agents, landmarks)
    return -np.linalg.norm(agents - landmarks[assign], axis=-1)


def sample_landmarks(n: int, rng: np.random.Generator, margin: float = 0.2) -> np.ndarray:
    return rng.uniform(-ARENA + margin, ARENA - margin, size=(n, 2))


def clip_step(actions: np.ndarray, step_cap: float) -> np.ndarray:
    """Shrink each agent's displacement to length at most ``step_cap``."""
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
    norm = np.linalg.norm(actions, axis=-1, keepdims=True)
    scale = np.minimum(1.0, step_cap / np.maximum(norm, 1e-12))
    return actions * scale


@dataclass
class LandmarkEnv:
    landmarks: np.ndarray
    horizon: int = 25
    step_cap: float = 0.2
    positions: np.ndarray = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 2)
        if len(self.landmarks) < 1:
            raise ValueError("need at least one landmark")
        if np.any(np.abs(self.landmarks) > ARENA):
            raise ValueError("landmarks must lie inside the arena")

    @property
    def n_agents(self) -> int:
        return len(self.landmarks)

    @property
    def obs_dim(self) -> int:
        return 2 + 2 * self.n_agents

    def descriptor(self) -> dict:
        return {
            "name": "landmark",
            "n_agents": self.n_agents,
            "landmarks": self.landmarks.tolist(),
            "horizon": self.horizon,
            "step_cap": self.step_cap,
            "action": {"kind": "continuous", "dims": [2] * self.n_agents},
            "obs_dim": self.obs_dim,
        }

    def observe(self) -> np.ndarray:
        flat = np.tile(self.landmarks.reshape(-1), (self.n_agents, 1))
        return np.concatenate([self.positions, flat], axis=1)

    def reset(self, rng: np.random.Generator, positions=None) -> np.ndarray:
        if positions is None:
            positions = rng.uniform(-ARENA, ARENA, size=(self.n_agents, 2))
        self.positions = np.asarray(positions, dtype=np.float64).reshape(self.n_agents, 2).copy()
        self.t = 0
        return self.observe()

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, bool]:
        move = clip_step(actions, self.step_cap)
        self.positions = np.clip(self.positions + move, -ARENA, ARENA)
        self.t += 1
        rew = landmark_reward(self.positions, self.landmarks)
        return self.observe(), rew, self.t >= self.horizon


def scripted_actions(positions, landmarks, step_cap: float, noise_std: float, rng) -> np.ndarray:
    """Head for the matched landmark at capped speed, plus Gaussian jitter."""
    assign = optimal_assignment(positions, landmarks)
    delta = landmarks[assign] - positions
    act = clip_step(delta, step_cap)
    if noise_std > 0:
        act = act + noise_std * rng.standard_normal(act.shape)
    return clip_step(act, step_cap)
