"""Episode returns for any actor, and the Q-based gap between two policies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Names accepted in metrics.csv; anything else is a typo worth failing on.
METRIC_NAMES = frozenset(
    {
        "flow_bc_loss",
        "critic_loss",
        "mean_q",
        "distill_loss",
        "q_term",
        "actor_loss",
        "value_gap",
        "return_gap",
        "return_flow",
        "return_one_step",
        "return_dataset",
        "mi_joint",
        "mi_factored",
        "w2_exact",
        "coupling_rms",
    }
)


@dataclass
class MetricReport:
    step: int
    values: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)

    def add(self, name: str, value: float, aux: str = "") -> None:
        if name not in METRIC_NAMES:
            raise KeyError(f"unregistered metric {name!r}")
        self.values[name] = float(value)
        if aux:
            self.aux[name] = aux

    def rows(self) -> list[tuple]:
        return [(self.step, k, v, self.aux.get(k, "")) for k, v in sorted(self.values.items())]


class FlowActor:
    """Centralized joint flow: all agents' observations in, joint action out."""

    def __init__(self, flow, temperature: float = 0.0):
        self.flow = flow
        self.temperature = temperature

    def reset(self, rng) -> None:
        pass

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        from ..flow import decode_discrete, sample_joint_action

        x, _ = sample_joint_action(self.flow, np.asarray(obs).reshape(1, -1), rng)
        space = self.flow.action_space
        if space.discrete:
            return decode_discrete(x, space, self.temperature, rng)[0]
        return x[0].reshape(space.n_agents, -1)


class OneStepActor:
    """Decentralized execution: agent ``i`` only sees ``obs[i]``."""

    def __init__(self, policies, temperature: float = 0.0):
        self.policies = policies
        self.temperature = temperature

    def reset(self, rng) -> None:
        pass

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        from ..distill import one_step_act

        out = [one_step_act(self.policies, i, obs[i], rng, self.temperature)[0] for i in range(len(obs))]
        return np.array(out) if self.policies.action_space.discrete else np.stack(out)


class ReplayActor:
    """Plays back the recorded joint actions of a randomly chosen trajectory."""

    def __init__(self, dataset):
        self.trajectories = dataset.trajectories
        self.discrete = dataset.action_space.discrete
        self._current = None
        self._t = 0

    def reset(self, rng) -> None:
        self._current = self.trajectories[rng.integers(len(self.trajectories))]
        self._t = 0

    def act(self, obs, rng) -> np.ndarray:
        traj = self._current
        a = traj.act[min(self._t, traj.length - 1)]
        self._t += 1
        return a[:, 0] if self.discrete else a


def evaluate_return(actor, env, episodes: int, rng: np.random.Generator) -> float:
    """Undiscounted team return (rewards summed over agents and time), averaged over episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    totals = []
    for _ in range(episodes):
        obs = env.reset(rng)
        actor.reset(rng)
        total, done = 0.0, False
        while not done:
            obs, rew, done = env.step(actor.act(obs, rng))
            total += float(np.sum(rew))
        totals.append(total)
    return float(np.mean(totals))


def value_gap(critics, flow, one_step, obs_set, samples: int, rng: np.random.Generator, deploy: bool = False) -> float:
    """Mean over observations of ``|E_w Q_tot - E_flow Q_tot|`` with shared noise."""
    from ..critic import q_tot
    from ..distill import paired_samples

    obs_set = np.atleast_2d(np.asarray(obs_set, dtype=np.float64))
    gaps = []
    for o in obs_set:
        obs, a_w, a_phi = paired_samples(one_step, flow, o, samples, rng, deploy=deploy)
        gaps.append(abs(float(q_tot(critics, obs, a_w).data.mean() - q_tot(critics, obs, a_phi).data.mean())))
    return float(np.mean(gaps))
