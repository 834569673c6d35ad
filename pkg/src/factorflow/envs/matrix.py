"""Stateless two-agent games with a single decision per episode."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# team reward for (a1, a2) in the coordination and payoff games
COORDINATION_TABLE = np.array([[0.0, 1.0], [1.0, 2.0]])

GAMES = ("pure_coordination", "payoff_zeta", "xor")


def xor_reward(a1, a2):
    """Team reward, maximal (zero) exactly on the anti-aligned set a1 = -a2."""
    return -(np.asarray(a1, dtype=np.float64) + np.asarray(a2, dtype=np.float64)) ** 2


def matrix_observation(n_agents: int = 2) -> np.ndarray:
    """Constant feature 1.0 followed by a one-hot agent id."""
    return np.concatenate([np.ones((n_agents, 1)), np.eye(n_agents)], axis=1)


@dataclass
class MatrixGameEnv:
    """One-step game; the team reward is split evenly across agents."""

    game: str
    zeta: float | None = None
    horizon: int = 1

    def __post_init__(self):
        if self.game not in GAMES:
            raise ValueError(f"unknown game {self.game!r}")
        if self.game == "payoff_zeta" and not (self.zeta is not None and 0.0 <= self.zeta <= 1.0):
            raise ValueError("payoff_zeta needs zeta in [0, 1]")

    n_agents = 2

    @property
    def discrete(self) -> bool:
        return self.game != "xor"

    @property
    def obs_dim(self) -> int:
        return 1 + self.n_agents

    def descriptor(self) -> dict:
        action = {"kind": "discrete", "dims": [2, 2]} if self.discrete else {"kind": "continuous", "dims": [1, 1]}
        return {
            "name": self.game,
            "n_agents": self.n_agents,
            "zeta": self.zeta,
            "horizon": 1,
            "action": action,
            "obs_dim": self.obs_dim,
        }

    def team_reward(self, actions) -> np.ndarray:
        """Team reward for a batch of joint actions ``(B, 2)``."""
        actions = np.asarray(actions).reshape(-1, 2)
        if self.discrete:
            idx = actions.astype(np.int64)
            if np.any((idx < 0) | (idx > 1)):
                raise ValueError("matrix game actions must be 0 or 1")
            return COORDINATION_TABLE[idx[:, 0], idx[:, 1]]
        return xor_reward(actions[:, 0], actions[:, 1])

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return matrix_observation(self.n_agents)

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, bool]:
        team = float(self.team_reward(np.asarray(actions).reshape(1, -1))[0])
        return matrix_observation(self.n_agents), np.full(self.n_agents, team / self.n_agents), True
