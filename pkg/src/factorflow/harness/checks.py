"""Pass/fail checks over a run's CSV outputs, shared by the suite and the ``verify`` command."""

from __future__ import annotations

import numpy as np

from .train import read_bounds, read_metrics


def smoothed(values, window: int = 10) -> np.ndarray:
    """Trailing moving average; shorter series are averaged whole."""
    values = np.asarray(values, dtype=np.float64)
    window = max(1, min(window, len(values)))
    return np.convolve(values, np.ones(window) / window, mode="valid")


def prop1_checks(bounds: list[dict], slack_all: float = 0.10, slack_most: float = 0.02, share: float = 0.95) -> dict:
    ratio = np.array([b["w2_exact"] / b["coupling_rms"] if b["coupling_rms"] > 0 else 0.0 for b in bounds])
    return {
        "prop1_every_checkpoint": bool(np.all(ratio <= 1.0 + slack_all)),
        "prop1_most_checkpoints": bool(np.mean(ratio <= 1.0 + slack_most) >= share),
    }


def prop2_check(bounds: list[dict], slack: float = 0.10) -> dict:
    ok = [b["value_gap"] <= b["bound"] * (1.0 + slack) for b in bounds]
    return {"prop2_every_checkpoint": bool(all(ok))}


def mi_checks(metrics: dict, total_steps: int, cap: float = 0.15, warmup: float = 0.10) -> dict:
    """Factored MI stays under ``cap`` after warm-up; the joint MI peak (first half) beats factored there."""
    joint = dict(metrics["mi_joint"])
    fact = dict(metrics["mi_factored"])
    late = [v for s, v in fact.items() if s > warmup * total_steps]
    early = [s for s in joint if s <= 0.5 * total_steps]
    peak = max(early, key=lambda s: joint[s])
    return {
        "mi_factored_capped": bool(late and max(late) <= cap),
        "mi_joint_peak_exceeds_factored": bool(joint[peak] > fact[peak]),
    }


def convergence_check(bounds: list[dict], window: int = 10, factor: float = 0.5) -> dict:
    out = {}
    for name in ("distill_loss", "value_gap"):
        s = smoothed([b[name] for b in bounds], window)
        out[f"{name}_halves"] = bool(s[-1] < factor * s[0])
    return out


def landmark_checks(bounds_csv: str, metrics_csv: str) -> dict:
    bounds = read_bounds(bounds_csv)
    metrics = read_metrics(metrics_csv)
    total = max(b["step"] for b in bounds)
    out = {}
    out.update(prop1_checks(bounds))
    out.update(prop2_check(bounds))
    out.update(mi_checks(metrics, total))
    out.update(convergence_check(bounds))
    return out
