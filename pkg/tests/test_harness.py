import csv
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from factorflow import cli
from factorflow.harness import ExperimentConfig, TrainingAborted, bench_inference, bench_models, emit_plots, train
from factorflow.harness import suite as suite_mod
from factorflow.harness.bench import BASELINE_NOTE, BENCH_HEADER
from factorflow.harness.checks import convergence_check, mi_checks, prop1_checks, prop2_check, smoothed
from factorflow.harness.plots import PlotInputError, read_table
from factorflow.harness.train import build_dataset, init_state, stream_seeds, train_step
from factorflow.nn import count_evaluations, load_checkpoint, tree_leaves

from .oracles import spearman

# a few seconds per run: one-state game, small evaluation budgets
FAST = dict(
    env="xor", samples=200, steps=20, eval_interval=5, eval_episodes=2, bound_obs=1, mi_obs=1,
    bound_samples=32, mi_samples=200, lipschitz_pairs=200, hidden=[16, 16],
)


def fast_cfg(tmp_path, name="run", **kw):
    return ExperimentConfig(**{**FAST, "out_dir": str(tmp_path / name), **kw})


def leaves(state):
    return tree_leaves((state.flow.velocity, state.policies.nets, state.critics.online, state.critics.target))


# ----------------------------------------------------------------- config


def test_config_overrides_parse_json():
    cfg = ExperimentConfig().with_overrides(["alpha=0.5", "hidden=[8, 8]", "env=xor", "normalize_q=true"])
    assert cfg.alpha == 0.5 and cfg.hidden == [8, 8] and cfg.env == "xor" and cfg.normalize_q is True


@pytest.mark.parametrize(
    "pairs,match",
    [(["nope=1"], "unknown config key"), (["alpha"], "key=value"), (["env=mpe"], "env must be"), (["steps=0"], ">= 1"),
     (["policy_lr=-1"], "non-negative"), (["parts=[\"flow\",\"x\"]"], "unknown training parts")],
)
def test_config_rejects_bad_values(pairs, match):
    with pytest.raises(ValueError, match=match):
        ExperimentConfig().with_overrides(pairs)


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.batch_size, cfg.flow_steps, cfg.alpha, cfg.gamma, cfg.tau) == (64, 10, 3.0, 0.995, 0.005)
    assert cfg.policy_lr == cfg.value_lr == 3e-4
    assert ExperimentConfig(steps=1000).resolved_eval_interval == 20


def test_config_json_round_trip(tmp_path):
    cfg = fast_cfg(tmp_path, alpha=0.25)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(path) == cfg


# ----------------------------------------------------------------- training


def test_zero_learning_rates_leave_parameters(tmp_path):
    cfg = fast_cfg(tmp_path, steps=1, policy_lr=0.0, value_lr=0.0)
    seeds = stream_seeds(cfg.seed)
    ds = build_dataset(cfg, np.random.default_rng(seeds["data"]))
    init = init_state(cfg, ds, np.random.default_rng(seeds["init"]))
    arts = train(cfg)
    assert all(np.array_equal(a, b) for a, b in zip(leaves(init), leaves(arts.state)))


@pytest.mark.parametrize("part", ["flow", "critic", "actor"])
def test_each_update_touches_only_its_parameters(tmp_path, part):
    cfg = fast_cfg(tmp_path, parts=[part])
    ds = build_dataset(cfg, np.random.default_rng(0))
    state = init_state(cfg, ds, np.random.default_rng(1))
    data = ds.transitions()
    new, _ = train_step(state, data.take(np.arange(16)), cfg, np.random.default_rng(2))
    groups = {
        "flow": (state.flow.velocity, new.flow.velocity),
        "critic": (state.critics.online, new.critics.online),
        "actor": (state.policies.nets, new.policies.nets),
    }
    for name, (before, after) in groups.items():
        same = all(np.array_equal(a, b) for a, b in zip(tree_leaves(before), tree_leaves(after)))
        assert same == (name != part)


def test_logged_losses_and_artifacts(tmp_path):
    arts = train(fast_cfg(tmp_path))
    for name in ("config.json", "metrics.csv", "bounds.csv", "checkpoint.ffck", "dataset.jsonl"):
        assert os.path.exists(os.path.join(arts.run_dir, name))
    with open(arts.metrics_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = {r["metric_name"] for r in rows}
    assert {"flow_bc_loss", "critic_loss", "mean_q", "distill_loss", "q_term", "actor_loss", "w2_exact", "mi_joint",
            "return_flow", "return_one_step"} <= names
    for r in rows:
        if r["metric_name"] == "actor_loss":
            step = r["step"]
            d = next(float(x["value"]) for x in rows if x["step"] == step and x["metric_name"] == "distill_loss")
            q = next(float(x["value"]) for x in rows if x["step"] == step and x["metric_name"] == "q_term")
            assert float(r["value"]) == pytest.approx(-q + 3.0 * d, abs=1e-12)
    with open(arts.bounds_csv, newline="") as fh:
        bounds = list(csv.DictReader(fh))
    assert [int(b["step"]) for b in bounds] == [0, 5, 10, 15, 20]
    assert ExperimentConfig.load(arts.config_path) == fast_cfg(tmp_path)


def test_identical_runs_are_bitwise_equal(tmp_path):
    a = train(fast_cfg(tmp_path, "a"))
    b = train(fast_cfg(tmp_path, "b"))
    for name in ("metrics.csv", "bounds.csv"):
        with open(os.path.join(a.run_dir, name), "rb") as fa, open(os.path.join(b.run_dir, name), "rb") as fb:
            assert fa.read() == fb.read()


def test_rerun_from_stored_config(tmp_path):
    a = train(fast_cfg(tmp_path, "a"))
    cfg = ExperimentConfig.load(a.config_path).with_overrides([f"out_dir={tmp_path / 'again'}"])
    b = train(cfg)
    with open(a.metrics_csv, "rb") as fa, open(b.metrics_csv, "rb") as fb:
        assert fa.read() == fb.read()


def test_nan_aborts_and_keeps_finite_checkpoint(tmp_path):
    cfg = fast_cfg(tmp_path, policy_lr=1e250, value_lr=1e250, eval_interval=1)
    with pytest.raises(TrainingAborted, match="not finite"):
        train(cfg)
    run_dir = cfg.out_dir
    assert os.path.exists(os.path.join(run_dir, "ABORTED"))
    nets, _ = load_checkpoint(os.path.join(run_dir, "checkpoint.ffck"))
    assert all(np.all(np.isfinite(x)) for net in nets.values() for x in net.arrays())


def test_flow_only_run_skips_evaluation(tmp_path):
    arts = train(fast_cfg(tmp_path, parts=["flow"]))
    with open(arts.bounds_csv) as fh:
        assert len(fh.read().strip().split("\n")) == 1


def test_discrete_and_landmark_runs(tmp_path):
    for env in ("pure_coordination", "payoff_zeta"):
        arts = train(fast_cfg(tmp_path, env, env=env))
        assert arts.state.flow.action_space.discrete
    arts = train(fast_cfg(tmp_path, "lm", env="landmark", episodes=3, steps=5, eval_interval=5))
    assert arts.state.flow.obs_dims == (8, 8, 8)


def test_centralized_critic_ablation(tmp_path):
    arts = train(fast_cfg(tmp_path, centralized_critic=True))
    assert arts.state.critics.n_agents == 1 and arts.state.critics.obs_dims == (6,)


# ----------------------------------------------------------------- checks


def test_smoothed_is_moving_average():
    assert smoothed([1, 2, 3, 4], 2).tolist() == [1.5, 2.5, 3.5]
    assert smoothed([1, 3], 10).tolist() == [2.0]


def _bounds(ratios, gaps=None):
    gaps = gaps or [0.0] * len(ratios)
    return [{"w2_exact": r, "coupling_rms": 1.0, "value_gap": g, "bound": 1.0} for r, g in zip(ratios, gaps)]


def test_bound_checks():
    ok = prop1_checks(_bounds([1.0] * 19 + [1.05]))
    assert ok == {"prop1_every_checkpoint": True, "prop1_most_checkpoints": True}
    assert not prop1_checks(_bounds([1.0] * 19 + [1.2]))["prop1_every_checkpoint"]
    assert not prop1_checks(_bounds([1.05] * 2 + [1.0] * 18))["prop1_most_checkpoints"]
    assert prop2_check(_bounds([0.0, 0.0], [1.1, 0.5]))["prop2_every_checkpoint"]
    assert not prop2_check(_bounds([0.0], [1.11]))["prop2_every_checkpoint"]


def test_mi_and_convergence_checks():
    steps = list(range(0, 101, 10))
    joint = [(s, 0.5 if s == 20 else 0.1) for s in steps]
    fact = [(s, 0.3 if s == 0 else 0.05) for s in steps]
    out = mi_checks({"mi_joint": joint, "mi_factored": fact}, 100)
    assert out == {"mi_factored_capped": True, "mi_joint_peak_exceeds_factored": True}
    fact[-1] = (100, 0.2)
    assert not mi_checks({"mi_joint": joint, "mi_factored": fact}, 100)["mi_factored_capped"]
    rows = [{"distill_loss": 1.0 / (k + 1), "value_gap": 1.0} for k in range(30)]
    assert convergence_check(rows) == {"distill_loss_halves": True, "value_gap_halves": False}


# ----------------------------------------------------------------- plots


def _is_svg(path):
    return ET.parse(path).getroot().tag.endswith("svg")


def test_emit_plots_from_run(tmp_path):
    arts = train(fast_cfg(tmp_path))
    paths = emit_plots(arts.run_dir)
    assert {os.path.basename(p) for p in paths} == {"losses.svg", "diagnostics.svg", "bound_scatter.svg"}
    assert all(_is_svg(p) for p in paths)


def test_plot_missing_column_named(tmp_path):
    (tmp_path / "metrics.csv").write_text("step,metric_name,value\n1,flow_bc_loss,0.5\n")
    with pytest.raises(PlotInputError, match="'aux'"):
        emit_plots(str(tmp_path))
    assert not list(tmp_path.glob("*.svg"))


def test_plot_empty_file_writes_nothing(tmp_path):
    (tmp_path / "metrics.csv").write_text("")
    with pytest.raises(PlotInputError, match="empty"):
        emit_plots(str(tmp_path))
    assert not list(tmp_path.glob("*.svg"))


def test_plot_bad_bounds_writes_nothing(tmp_path):
    (tmp_path / "metrics.csv").write_text("step,metric_name,value,aux\n1,flow_bc_loss,0.5,\n")
    (tmp_path / "bounds.csv").write_text("step,w2_exact\n1,0.1\n")
    with pytest.raises(PlotInputError, match="coupling_rms"):
        emit_plots(str(tmp_path))
    assert not list(tmp_path.glob("*.svg"))


def test_plot_single_row_is_valid_svg(tmp_path):
    (tmp_path / "metrics.csv").write_text("step,metric_name,value,aux\n1,flow_bc_loss,0.5,\n1,value_gap,0.1,\n")
    (tmp_path / "bounds.csv").write_text(
        "step,w2_exact,coupling_rms,L_hat,value_gap,bound\n1,0.1,0.2,2.0,0.3,0.4\n"
    )
    paths = emit_plots(str(tmp_path))
    assert len(paths) == 3 and all(_is_svg(p) for p in paths)


def test_read_table_requires_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n")
    with pytest.raises(PlotInputError, match="no data rows"):
        read_table(str(p), ("a",))
    with pytest.raises(PlotInputError, match="not found"):
        read_table(str(tmp_path / "missing.csv"), ("a",))


# ----------------------------------------------------------------- bench


def test_bench_counts_and_csv(tmp_path):
    flow, policies = bench_models(3, hidden=(16, 16), flow_steps=10)
    out = tmp_path / "bench.csv"
    res = bench_inference(flow, policies, trials=20, out_path=str(out))
    assert (res.one_step_nfe, res.flow_nfe, res.trials) == (3, 10, 20)
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == BENCH_HEADER
    assert [r[0] for r in rows[1:]] == ["one_step", "joint_flow"]
    assert rows[1][-1] == BASELINE_NOTE
    with pytest.raises(ValueError):
        bench_inference(flow, policies, trials=0)


def test_nfe_ratio_between_step_counts():
    counts = []
    for m in (1, 10):
        flow, _ = bench_models(2, hidden=(8,), flow_steps=m)
        with count_evaluations() as c:
            from factorflow.flow import euler_sample

            euler_sample(flow, np.zeros((1, 16)), np.zeros((1, 4)))
        counts.append(c.count)
    assert counts[1] == 10 * counts[0]


# ----------------------------------------------------------------- suite


def test_suite_records_failure_and_continues(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(suite_mod, "run_xor", broken)
    report = suite_mod.run_didactic_suite(
        str(tmp_path), seeds=(0,), studies=("pure_coordination", "xor"), steps=10, samples=200,
        lipschitz_pairs=100, bound_samples=32, mi_samples=200, eval_interval=10, hidden=[16, 16],
    )
    assert list(report.failures) == ["xor/seed0"] and "synthetic failure" in report.failures["xor/seed0"]
    assert (tmp_path / "pure_coordination_mass.csv").exists() and _is_svg(tmp_path / "pure_coordination_mass.svg")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failures"] == ["xor/seed0"]
    assert set(summary["checks"]) == {"pure_coordination/seed0/optimal_mass", "pure_coordination_no_q/seed0/near_uniform"}
    assert not report.ok


def test_quadrant_and_mass_helpers():
    assert suite_mod.anti_aligned_fraction(np.array([[1, -1], [-1, 1], [1, 1], [-2, -3]])) == 0.5
    mass = suite_mod.joint_action_mass(np.array([[1, 1], [1, 1], [0, 1], [1, 0]]))
    assert mass.tolist() == [[0.0, 0.25], [0.25, 0.5]]
    x, y = [0, 1, 2, 3], [0.1, 0.2, 0.2, 0.5]
    assert suite_mod.spearman_rho(x, y) == pytest.approx(spearman(x, y), abs=1e-12)


# ----------------------------------------------------------------- CLI


def test_cli_gen_train_verify_plot(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    assert cli.main(["gen-data", "--set", "env=xor", "--set", "samples=200", "--out", str(data)]) == 0
    cfg_path = tmp_path / "cfg.json"
    cfg = fast_cfg(tmp_path, "cli_run", dataset_path=str(data))
    cfg_path.write_text(cfg.to_json())
    assert cli.main(["train", "--config", str(cfg_path)]) == 0
    run_dir = cfg.out_dir
    capsys.readouterr()
    code = cli.main(["verify", run_dir])
    lines = capsys.readouterr().out.strip().split("\n")
    assert all(line.split()[0] in ("PASS", "FAIL") for line in lines)
    assert code == (1 if any(line.startswith("FAIL") for line in lines) else 0)
    assert cli.main(["plot", run_dir]) == 0
    assert os.path.exists(os.path.join(run_dir, "losses.svg"))


def test_cli_bench_and_errors(tmp_path, capsys, monkeypatch):
    out = tmp_path / "b.csv"
    args = ["bench", "--trials", "10", "--hidden", "8", "--out", str(out), "--min-speedup", "0"]
    assert cli.main(args) == 0
    assert "diffusion" in capsys.readouterr().out and out.exists()
    assert cli.main(["train", "--set", "bogus=1"]) == 2
    assert cli.main(["verify", str(tmp_path / "nowhere")]) == 2
    monkeypatch.setenv("FACTORFLOW_OUT", str(tmp_path / "root"))
    assert cli.main(["gen-data", "--set", "env=payoff_zeta", "--set", "samples=10"]) == 0
    assert (tmp_path / "root" / "payoff_zeta_seed0.jsonl").exists()


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "factorflow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout
