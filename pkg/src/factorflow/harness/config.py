"""Experiment configuration: a flat dataclass stored as JSON next to results."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

ENVS = ("landmark", "pure_coordination", "payoff_zeta", "xor")
PARTS = ("flow", "critic", "actor")
OUT_ROOT_VAR = "FACTORFLOW_OUT"


def default_out_root() -> str:
    return os.environ.get(OUT_ROOT_VAR, "runs")


@dataclass
class ExperimentConfig:
    env: str = "landmark"
    dataset_path: str | None = None
    # generation settings used when dataset_path is None
    n_agents: int = 3
    episodes: int = 50
    samples: int = 2000
    noise_std: float = 0.02
    zeta: float = 0.5
    epsilon_rare: float = 0.1
    mode_std: float = 0.1

    seed: int = 0
    steps: int = 1000
    batch_size: int = 64
    flow_steps: int = 10
    alpha: float = 3.0
    gamma: float = 0.995
    tau: float = 0.005
    policy_lr: float = 3e-4
    value_lr: float = 3e-4
    adam_eps: float = 1e-5
    hidden: list = field(default_factory=lambda: [64, 64])
    layer_norm: bool = True
    twin_reduction: str = "mean"
    centralized_critic: bool = False
    parts: list = field(default_factory=lambda: list(PARTS))

    q_weight: float = 1.0
    normalize_q: bool = False
    discrete_q: str = "expected"
    temperature: float = 0.0

    eval_interval: int = 0  # 0 means every 2% of steps
    bound_samples: int = 256
    bound_obs: int = 4
    bound_tol: float = 0.10
    lipschitz_pairs: int = 10_000
    mi_samples: int = 2048
    mi_obs: int = 2
    mi_bins: int = 16
    eval_episodes: int = 10
    deploy_discrete: bool = False
    eval_obs: str = "initial"  # "initial": episode start observations; "any": all dataset rows

    deterministic: bool = True
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ENVS:
            raise ValueError(f"env must be one of {ENVS}, got {self.env!r}")
        for name in ("policy_lr", "value_lr", "adam_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.steps < 1 or self.batch_size < 1 or self.flow_steps < 1:
            raise ValueError("steps, batch_size and flow_steps must be >= 1")
        if not 0.0 <= self.tau <= 1.0 or not 0.0 <= self.gamma <= 1.0:
            raise ValueError("tau and gamma must lie in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        unknown = set(self.parts) - set(PARTS)
        if unknown:
            raise ValueError(f"unknown training parts {sorted(unknown)}")
        if self.discrete_q not in ("expected", "straight_through"):
            raise ValueError("discrete_q must be 'expected' or 'straight_through'")

    @property
    def resolved_eval_interval(self) -> int:
        return self.eval_interval if self.eval_interval > 0 else max(1, self.steps // 50)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, pairs) -> ExperimentConfig:
        """Apply ``key=value`` strings; values parse as JSON, else stay strings."""
        d = self.to_dict()
        for pair in pairs:
            key, sep, raw = pair.partition("=")
            if not sep:
                raise ValueError(f"override {pair!r} is not key=value")
            if key not in d:
                raise ValueError(f"unknown config key {key!r}")
            try:
                d[key] = json.loads(raw)
            except json.JSONDecodeError:
                d[key] = raw
        return type(self).from_dict(d)
