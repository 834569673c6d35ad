"""The four didactic studies: landmark covering, pure coordination, XOR and the payoff sweep."""

from __future__ import annotations

import csv
import json
import os
import traceback
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from ..distill import joint_one_step_actions, verify_bounds
from ..envs import MatrixGameEnv
from ..envs.matrix import matrix_observation
from ..flow import decode_discrete, euler_sample, sample_noise
from ..metrics import FlowActor, OneStepActor, evaluate_return
from .checks import landmark_checks
from .config import ExperimentConfig
from .plots import plot_landmark, plot_mass_grid, plot_payoff, plot_xor
from .train import fmt, read_bounds, read_metrics, train

# Settings that differ from the ExperimentConfig defaults, per study.
LANDMARK_PRESET = {"env": "landmark", "policy_lr": 3e-3, "noise_std": 0.005, "normalize_q": True, "eval_episodes": 0}
# One-state games need fewer Lipschitz pairs; 20 checkpoints per run.
_ONE_STATE = {"eval_episodes": 0, "bound_obs": 1, "mi_obs": 1, "lipschitz_pairs": 2000, "eval_interval": 50}
MATRIX_PRESET = {"alpha": 0.01, **_ONE_STATE}
XOR_PRESET = {"env": "xor", **_ONE_STATE}
ZETAS = (0.0, 0.25, 0.5, 0.75, 1.0)
STUDIES = ("landmark", "pure_coordination", "xor", "payoff")


def study_config(study: str, seed: int, out_dir: str, **overrides) -> ExperimentConfig:
    base = {
        "landmark": LANDMARK_PRESET,
        "pure_coordination": {"env": "pure_coordination", **MATRIX_PRESET},
        "payoff": {"env": "payoff_zeta", **MATRIX_PRESET},
        "xor": XOR_PRESET,
    }[study]
    return ExperimentConfig(**{**base, "seed": seed, "out_dir": out_dir, **overrides})


# ------------------------------------------------------------------ measurements


def _matrix_obs(n: int) -> np.ndarray:
    return np.tile(matrix_observation(2).reshape(1, -1), (n, 1))


def joint_action_mass(indices: np.ndarray) -> np.ndarray:
    """2x2 empirical frequencies of discrete joint actions ``(n, 2)``."""
    mass = np.zeros((2, 2))
    np.add.at(mass, (indices[:, 0], indices[:, 1]), 1.0)
    return mass / len(indices)


def matrix_policy_masses(state, samples: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Joint-action mass of the flow, the one-step agents, and their marginal product."""
    space = state.flow.action_space
    obs = _matrix_obs(samples)
    flow_idx = decode_discrete(euler_sample(state.flow, obs, sample_noise(state.flow, samples, rng)), space)
    one_idx = decode_discrete(joint_one_step_actions(state.policies, obs, rng), space)
    one = joint_action_mass(one_idx)
    return {
        "flow": joint_action_mass(flow_idx),
        "one_step": one,
        "product": np.outer(one.sum(axis=1), one.sum(axis=0)),
    }


def dataset_mass(dataset) -> np.ndarray:
    acts = np.concatenate([t.act.reshape(-1, 2) for t in dataset.trajectories]).astype(np.int64)
    return joint_action_mass(acts)


def anti_aligned_fraction(actions: np.ndarray) -> float:
    """Share of 2-D joint actions in the quadrants where the signs differ."""
    actions = np.asarray(actions).reshape(-1, 2)
    return float(np.mean(actions[:, 0] * actions[:, 1] < 0))


def xor_samples(state, samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    obs = _matrix_obs(samples)
    joint = euler_sample(state.flow, obs, sample_noise(state.flow, samples, rng))
    factored = joint_one_step_actions(state.policies, obs, rng)
    return joint, factored


def final_w2(state, samples: int, rng: np.random.Generator) -> float:
    """W2 between the flow and the one-step agents in flow action space at the game's observation."""
    obs = matrix_observation(2).reshape(1, -1)
    return verify_bounds(state.policies, state.flow, None, obs, samples, rng)["w2_exact"]


# ------------------------------------------------------------------ studies


def run_landmark(out_dir: str, seed: int = 0, **overrides) -> dict:
    arts = train(study_config("landmark", seed, os.path.join(out_dir, f"landmark_seed{seed}"), **overrides))
    return {"run_dir": arts.run_dir, "bounds_csv": arts.bounds_csv, "metrics_csv": arts.metrics_csv}


def run_pure_coordination(out_dir: str, seed: int = 0, with_q: bool = True, samples: int = 4000, **overrides) -> dict:
    tag = "igm" if with_q else "no_q"
    cfg = study_config(
        "pure_coordination", seed, os.path.join(out_dir, f"pure_coordination_{tag}_seed{seed}"), **overrides
    )
    if not with_q:
        cfg = cfg.with_overrides(["q_weight=0.0"])
    arts = train(cfg)
    masses = matrix_policy_masses(arts.state, samples, np.random.default_rng([seed, 11]))
    masses["dataset"] = dataset_mass(arts.dataset)
    return {"run_dir": arts.run_dir, "variant": tag, "masses": masses}


def run_xor(out_dir: str, seed: int = 0, samples: int = 1000, **overrides) -> dict:
    arts = train(study_config("xor", seed, os.path.join(out_dir, f"xor_seed{seed}"), **overrides))
    joint, factored = xor_samples(arts.state, samples, np.random.default_rng([seed, 13]))
    return {
        "run_dir": arts.run_dir,
        "joint": joint,
        "factored": factored,
        "joint_anti": anti_aligned_fraction(joint),
        "factored_anti": anti_aligned_fraction(factored),
    }


def run_payoff_sweep(
    out_dir: str, seed: int = 0, zetas=ZETAS, episodes: int = 2000, w2_samples: int = 256, **overrides
) -> dict:
    rows = []
    for zeta in zetas:
        run_dir = os.path.join(out_dir, f"payoff_zeta{zeta:g}_seed{seed}")
        arts = train(study_config("payoff", seed, run_dir, zeta=zeta, **overrides))
        rng = np.random.default_rng([seed, 17, int(round(zeta * 100))])
        env = MatrixGameEnv("payoff_zeta", zeta)
        masses = matrix_policy_masses(arts.state, 4000, rng)
        rows.append(
            {
                "seed": seed,
                "zeta": zeta,
                "w2": final_w2(arts.state, w2_samples, rng),
                "return_flow": evaluate_return(FlowActor(arts.state.flow), env, episodes, rng),
                "return_one_step": evaluate_return(OneStepActor(arts.state.policies), env, episodes, rng),
                "flow_mass": masses["flow"],
                "one_step_mass": masses["one_step"],
            }
        )
    return {"rows": rows}


def spearman_rho(x, y) -> float:
    return float(spearmanr(x, y)[0])


# ------------------------------------------------------------------ suite


@dataclass
class SuiteReport:
    out_dir: str
    results: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures and all(self.checks.values())


def _write_mass_rows(writer, seed, label, mass):
    for a1 in range(2):
        for a2 in range(2):
            writer.writerow([seed, label, a1, a2, fmt(mass[a1, a2])])


def _emit_landmark(out_dir, results):
    rows = []
    for seed, res in results:
        metrics = read_metrics(res["metrics_csv"])
        mi_j = dict(metrics.get("mi_joint", []))
        mi_f = dict(metrics.get("mi_factored", []))
        for b in read_bounds(res["bounds_csv"]):
            rows.append([seed, b["step"], b["distill_loss"], b["value_gap"], mi_j.get(b["step"], float("nan")),
                         mi_f.get(b["step"], float("nan")), b["w2_exact"], b["coupling_rms"], b["L_hat"], b["bound"]])
    path = os.path.join(out_dir, "landmark_diagnostics.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "step", "distill_loss", "value_gap", "mi_joint", "mi_factored", "w2_exact",
                    "coupling_rms", "L_hat", "bound"])
        for r in rows:
            w.writerow([fmt(v) for v in r])
    plot_landmark(path, os.path.join(out_dir, "landmark_diagnostics.svg"))


def _emit_pure_coordination(out_dir, results):
    path = os.path.join(out_dir, "pure_coordination_mass.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "policy", "a1", "a2", "mass"])
        for seed, res in results:
            m = res["masses"]
            if res["variant"] == "igm":
                _write_mass_rows(w, seed, "dataset", m["dataset"])
                _write_mass_rows(w, seed, "flow", m["flow"])
                _write_mass_rows(w, seed, "one_step_igm", m["one_step"])
            else:
                _write_mass_rows(w, seed, "one_step_no_q", m["product"])
    plot_mass_grid(path, os.path.join(out_dir, "pure_coordination_mass.svg"))


def _emit_xor(out_dir, results):
    path = os.path.join(out_dir, "xor_modes.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "policy", "a1", "a2"])
        for seed, res in results:
            for label in ("joint", "factored"):
                for a in res[label]:
                    w.writerow([seed, label, fmt(a[0]), fmt(a[1])])
    plot_xor(path, os.path.join(out_dir, "xor_modes.svg"))


def _emit_payoff(out_dir, results):
    path = os.path.join(out_dir, "payoff_sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "zeta", "w2", "return_flow", "return_one_step"])
        for _, res in results:
            for r in res["rows"]:
                w.writerow([r["seed"], fmt(r["zeta"]), fmt(r["w2"]), fmt(r["return_flow"]), fmt(r["return_one_step"])])
    plot_payoff(path, os.path.join(out_dir, "payoff_sweep.svg"))


def run_didactic_suite(out_dir: str, seeds=(0, 1, 2), studies=STUDIES, **overrides) -> SuiteReport:
    """Run every study for every seed; a failing sub-run is recorded and the rest continue."""
    os.makedirs(out_dir, exist_ok=True)
    report = SuiteReport(out_dir)
    jobs = {
        "landmark": lambda s: run_landmark(out_dir, s, **overrides),
        "pure_coordination": lambda s: run_pure_coordination(out_dir, s, True, **overrides),
        "pure_coordination_no_q": lambda s: run_pure_coordination(out_dir, s, False, **overrides),
        "xor": lambda s: run_xor(out_dir, s, **overrides),
        "payoff": lambda s: run_payoff_sweep(out_dir, s, **overrides),
    }
    names = [n for n in jobs if n in studies or (n == "pure_coordination_no_q" and "pure_coordination" in studies)]
    for name in names:
        for seed in seeds:
            try:
                report.results.setdefault(name, []).append((seed, jobs[name](seed)))
            except Exception:  # noqa: BLE001 - the suite records and moves on
                report.failures[f"{name}/seed{seed}"] = traceback.format_exc()

    emitters = {
        "landmark": lambda r: _emit_landmark(out_dir, r),
        "pure_coordination": lambda r: _emit_pure_coordination(
            out_dir, r + report.results.get("pure_coordination_no_q", [])
        ),
        "xor": lambda r: _emit_xor(out_dir, r),
        "payoff": lambda r: _emit_payoff(out_dir, r),
    }
    for name, emit in emitters.items():
        if report.results.get(name):
            try:
                emit(report.results[name])
            except Exception:  # noqa: BLE001
                report.failures[f"{name}/emit"] = traceback.format_exc()

    report.checks = suite_checks(report)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump({"checks": report.checks, "failures": sorted(report.failures)}, fh, indent=2, sort_keys=True)
    return report


def suite_checks(report: SuiteReport) -> dict[str, bool]:
    """Pass/fail of the didactic claims that the suite's own outputs can decide."""
    checks = {}
    for seed, res in report.results.get("landmark", []):
        for k, v in landmark_checks(res["bounds_csv"], res["metrics_csv"]).items():
            checks[f"landmark/seed{seed}/{k}"] = v
    for seed, res in report.results.get("pure_coordination", []):
        m = res["masses"]
        checks[f"pure_coordination/seed{seed}/optimal_mass"] = bool(
            m["one_step"][1, 1] >= 0.5 and m["one_step"][1, 1] > m["dataset"][1, 1]
        )
    for seed, res in report.results.get("pure_coordination_no_q", []):
        p = res["masses"]["product"]
        checks[f"pure_coordination_no_q/seed{seed}/near_uniform"] = bool(np.all(np.abs(p - 0.25) <= 0.15))
    for seed, res in report.results.get("xor", []):
        checks[f"xor/seed{seed}/modes"] = bool(res["joint_anti"] >= 0.9 and res["factored_anti"] <= 0.6)
    for seed, res in report.results.get("payoff", []):
        rows = res["rows"]
        rho = spearman_rho([r["zeta"] for r in rows], [r["w2"] for r in rows])
        checks[f"payoff/seed{seed}/w2_rises"] = bool(rho >= 0.9)
        checks[f"payoff/seed{seed}/flow_return"] = bool(all(abs(r["return_flow"] - 1.0) <= 0.15 for r in rows))
    return checks
