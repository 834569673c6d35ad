"""Standalone SVG figures rendered from the CSV outputs.

Every function reads and validates all of its inputs before creating any
file, so a bad CSV never leaves a partial figure behind.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "factorflow"  # stable element ids across reruns


class PlotInputError(ValueError):
    pass


def read_table(path: str, required) -> list[dict]:
    """Rows of an RFC-4180 CSV, after checking that every ``required`` column exists."""
    if not os.path.exists(path):
        raise PlotInputError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise PlotInputError(f"{path}: empty file")
        missing = [c for c in required if c not in header]
        if missing:
            raise PlotInputError(f"{path}: missing column {missing[0]!r}")
        rows = list(reader)
    if not rows:
        raise PlotInputError(f"{path}: no data rows")
    return rows


def _floats(rows, col) -> np.ndarray:
    return np.array([float(r[col]) for r in rows])


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _series(metric_rows) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out: dict[str, list] = {}
    for r in metric_rows:
        out.setdefault(r["metric_name"], []).append((int(r["step"]), float(r["value"])))
    return {k: (np.array([s for s, _ in v]), np.array([x for _, x in v])) for k, v in out.items()}


def envelope_scatter(ax, x, gap, slope) -> None:
    """Value gap against the coupling W2 estimate, with the line ``slope * x``."""
    ax.scatter(x, gap, s=14, label="checkpoints")
    hi = max(float(np.max(x)), 1e-12) * 1.05
    ax.plot([0.0, hi], [0.0, slope * hi], "k--", label=f"envelope, slope {slope:.3g}")
    ax.set_xlabel("W2 (shared-noise coupling)")
    ax.set_ylabel("value gap")
    ax.legend()


def emit_plots(run_dir: str) -> list[str]:
    """Loss, gap/MI and bound-scatter figures for one training run."""
    metrics = read_table(os.path.join(run_dir, "metrics.csv"), ("step", "metric_name", "value", "aux"))
    bounds_path = os.path.join(run_dir, "bounds.csv")
    bounds = None
    if os.path.exists(bounds_path):
        bounds = read_table(bounds_path, ("step", "w2_exact", "coupling_rms", "L_hat", "value_gap", "bound"))
    series = _series(metrics)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("flow_bc_loss", "critic_loss", "distill_loss"):
        if name in series:
            ax.plot(*series[name], label=name, lw=0.8)
    ax.set_xlabel("gradient step")
    ax.set_yscale("log")
    ax.legend()
    written.append(_save(fig, os.path.join(run_dir, "losses.svg")))

    diag = [n for n in ("value_gap", "mi_joint", "mi_factored", "w2_exact", "coupling_rms") if n in series]
    if diag:
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in diag:
            ax.plot(*series[name], marker=".", label=name)
        ax.set_xlabel("gradient step")
        ax.legend()
        written.append(_save(fig, os.path.join(run_dir, "diagnostics.svg")))

    if bounds is not None:
        gap = _floats(bounds, "value_gap")
        if np.all(np.isfinite(gap)):
            fig, ax = plt.subplots(figsize=(5, 4))
            envelope_scatter(ax, _floats(bounds, "coupling_rms"), gap, float(np.max(_floats(bounds, "L_hat"))))
            written.append(_save(fig, os.path.join(run_dir, "bound_scatter.svg")))
    return written


def plot_landmark(csv_path: str, svg_path: str) -> str:
    rows = read_table(
        csv_path,
        ("seed", "step", "distill_loss", "value_gap", "mi_joint", "mi_factored", "w2_exact", "coupling_rms", "L_hat"),
    )
    step = _floats(rows, "step")
    fig, axes = plt.subplots(1, 4, figsize=(16, 3.6))
    axes[0].plot(step, _floats(rows, "distill_loss"), ".", label="distill loss")
    axes[0].set_yscale("log")
    axes[0].legend()
    axes[1].plot(step, _floats(rows, "value_gap"), ".", label="value gap")
    axes[1].legend()
    axes[2].plot(step, _floats(rows, "mi_joint"), ".", label="joint flow")
    axes[2].plot(step, _floats(rows, "mi_factored"), ".", label="one-step")
    axes[2].set_ylabel("inter-agent MI (nats)")
    axes[2].legend()
    envelope_scatter(axes[3], _floats(rows, "coupling_rms"), _floats(rows, "value_gap"), float(np.max(_floats(rows, "L_hat"))))
    for ax in axes[:3]:
        ax.set_xlabel("gradient step")
    fig.tight_layout()
    return _save(fig, svg_path)


def heatmap(ax, mass: np.ndarray, title: str) -> None:
    ax.imshow(mass, vmin=0.0, vmax=1.0, cmap="Blues")
    for (i, j), v in np.ndenumerate(mass):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center")
    ax.set_xticks([0, 1])
    ax.set_yticks([0, 1])
    ax.set_xlabel("agent 2 action")
    ax.set_ylabel("agent 1 action")
    ax.set_title(title)


def plot_mass_grid(csv_path: str, svg_path: str) -> str:
    """One 2x2 heatmap per policy label, averaged over seeds."""
    rows = read_table(csv_path, ("seed", "policy", "a1", "a2", "mass"))
    labels = list(dict.fromkeys(r["policy"] for r in rows))
    fig, axes = plt.subplots(1, len(labels), figsize=(3.2 * len(labels), 3.2), squeeze=False)
    for ax, label in zip(axes[0], labels):
        mass = np.zeros((2, 2))
        count = np.zeros((2, 2))
        for r in rows:
            if r["policy"] == label:
                i, j = int(r["a1"]), int(r["a2"])
                mass[i, j] += float(r["mass"])
                count[i, j] += 1
        heatmap(ax, mass / np.maximum(count, 1), label)
    fig.tight_layout()
    return _save(fig, svg_path)


def plot_xor(csv_path: str, svg_path: str) -> str:
    rows = read_table(csv_path, ("seed", "policy", "a1", "a2"))
    labels = list(dict.fromkeys(r["policy"] for r in rows))
    fig, axes = plt.subplots(1, len(labels), figsize=(4 * len(labels), 4), squeeze=False)
    for ax, label in zip(axes[0], labels):
        sel = [r for r in rows if r["policy"] == label]
        ax.scatter(_floats(sel, "a1"), _floats(sel, "a2"), s=3, alpha=0.4)
        ax.axhline(0.0, color="grey", lw=0.5)
        ax.axvline(0.0, color="grey", lw=0.5)
        ax.set_title(label)
        ax.set_xlabel("agent 1 action")
        ax.set_ylabel("agent 2 action")
    fig.tight_layout()
    return _save(fig, svg_path)


def plot_payoff(csv_path: str, svg_path: str) -> str:
    rows = read_table(csv_path, ("seed", "zeta", "w2", "return_flow", "return_one_step"))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for seed in dict.fromkeys(r["seed"] for r in rows):
        sel = [r for r in rows if r["seed"] == seed]
        z = _floats(sel, "zeta")
        axes[0].plot(z, _floats(sel, "return_flow"), "o-", color="C0", label="joint flow" if seed == rows[0]["seed"] else None)
        axes[0].plot(z, _floats(sel, "return_one_step"), "s-", color="C1", label="one-step" if seed == rows[0]["seed"] else None)
        axes[1].plot(z, _floats(sel, "w2"), "o-", label=f"seed {seed}")
    axes[0].set_xlabel("interaction strength")
    axes[0].set_ylabel("team return")
    axes[0].legend()
    axes[1].set_xlabel("interaction strength")
    axes[1].set_ylabel("W2(joint, factored)")
    axes[1].legend()
    fig.tight_layout()
    return _save(fig, svg_path)
