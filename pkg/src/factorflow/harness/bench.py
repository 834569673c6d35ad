"""Per-decision inference latency: one-step agents against the M-step joint flow."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from ..distill import OneStepPolicySet, one_step_act
from ..flow import ActionSpace, JointFlowPolicy, euler_sample, sample_noise
from ..nn import count_evaluations

BENCH_HEADER = ("method", "nfe", "median_s", "p95_s", "trials", "hidden", "n_agents", "flow_steps", "note")
BASELINE_NOTE = "baseline is this package's M-step Euler flow, not a multi-step diffusion sampler"


@dataclass(frozen=True)
class BenchResult:
    one_step_nfe: int
    flow_nfe: int
    one_step_median: float
    one_step_p95: float
    flow_median: float
    flow_p95: float
    trials: int

    @property
    def speedup(self) -> float:
        return self.flow_median / self.one_step_median


def bench_models(
    n_agents: int = 3,
    obs_dim: int = 8,
    act_dim: int = 2,
    hidden=(512, 512, 512, 512),
    flow_steps: int = 10,
    seed: int = 0,
) -> tuple[JointFlowPolicy, OneStepPolicySet]:
    """Freshly initialized networks; latency does not depend on the weights."""
    rng = np.random.default_rng(seed)
    obs_dims = (obs_dim,) * n_agents
    space = ActionSpace("continuous", (act_dim,) * n_agents)
    flow = JointFlowPolicy.create(rng, obs_dims, space, tuple(hidden), flow_steps)
    policies = OneStepPolicySet.create(rng, obs_dims, space, tuple(hidden))
    return flow, policies


def _one_step_decision(policies: OneStepPolicySet, obs: np.ndarray, rng) -> list:
    # each agent acts on its own slice, one network call apiece
    return [one_step_act(policies, i, obs[i], rng) for i in range(len(policies.nets))]


def _flow_decision(flow: JointFlowPolicy, joint_obs: np.ndarray, rng) -> np.ndarray:
    return euler_sample(flow, joint_obs, sample_noise(flow, 1, rng))


def bench_inference(
    flow: JointFlowPolicy,
    policies: OneStepPolicySet,
    trials: int = 1000,
    seed: int = 0,
    out_path: str | None = None,
) -> BenchResult:
    """Median and p95 wall-clock per decision step with trials interleaved.

    Both methods see the same observation each trial, alternating which goes
    first so neither benefits systematically from a warm cache.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    obs_dim = flow.obs_dims[0]
    n_agents = len(flow.obs_dims)

    obs = rng.standard_normal((n_agents, obs_dim))
    with count_evaluations() as c:
        _one_step_decision(policies, obs, rng)
    one_nfe = c.count
    with count_evaluations() as c:
        _flow_decision(flow, obs.reshape(1, -1), rng)
    flow_nfe = c.count

    for _ in range(5):  # warm-up
        _one_step_decision(policies, obs, rng)
        _flow_decision(flow, obs.reshape(1, -1), rng)

    one_t = np.empty(trials)
    flow_t = np.empty(trials)
    clock = time.perf_counter
    for k in range(trials):
        obs = rng.standard_normal((n_agents, obs_dim))
        joint = obs.reshape(1, -1)
        order = (0, 1) if k % 2 == 0 else (1, 0)
        for which in order:
            t0 = clock()
            if which == 0:
                _one_step_decision(policies, obs, rng)
                one_t[k] = clock() - t0
            else:
                _flow_decision(flow, joint, rng)
                flow_t[k] = clock() - t0

    res = BenchResult(
        one_nfe,
        flow_nfe,
        float(np.median(one_t)),
        float(np.percentile(one_t, 95)),
        float(np.median(flow_t)),
        float(np.percentile(flow_t, 95)),
        trials,
    )
    if out_path:
        write_bench_csv(out_path, res, policies.nets[0].hidden, n_agents, flow.flow_steps)
    return res


def write_bench_csv(path: str, res: BenchResult, hidden, n_agents: int, flow_steps: int) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    h = "x".join(str(w) for w in hidden)
    rows = [
        ("one_step", res.one_step_nfe, res.one_step_median, res.one_step_p95),
        ("joint_flow", res.flow_nfe, res.flow_median, res.flow_p95),
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_HEADER)
        for method, nfe, med, p95 in rows:
            w.writerow([method, nfe, repr(med), repr(p95), res.trials, h, n_agents, flow_steps, BASELINE_NOTE])
