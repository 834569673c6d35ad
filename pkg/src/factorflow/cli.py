"""Command line: ``python3 -m factorflow <command> ...``.

Configs are JSON files of ExperimentConfig fields, adjusted with repeated
``--set key=value``. Output goes under ``$FACTORFLOW_OUT`` (default ``runs``)
unless ``out_dir`` is set. Commands exit with status 1 when a check fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .envs import save_dataset
from .harness.config import ExperimentConfig, default_out_root


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(args.set or [])


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of config fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field (repeatable)")


def _report(checks: dict) -> int:
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(checks.values()) else 1


def cmd_gen_data(args) -> int:
    from .harness.train import build_dataset, stream_seeds

    cfg = _config(args)
    ds = build_dataset(cfg, np.random.default_rng(stream_seeds(cfg.seed)["data"]))
    out = args.out or os.path.join(default_out_root(), f"{cfg.env}_seed{cfg.seed}.jsonl")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_dataset(ds, out)
    print(out)
    return 0


def cmd_train(args) -> int:
    from .harness.train import train

    arts = train(_config(args), raise_on_abort=False)
    print(arts.run_dir)
    if arts.aborted:
        print(f"aborted: {arts.aborted}", file=sys.stderr)
        return 1
    return 0


def cmd_suite(args) -> int:
    from .harness.suite import STUDIES, run_didactic_suite

    studies = tuple(args.studies or STUDIES)
    out = args.out or os.path.join(default_out_root(), "suite")
    report = run_didactic_suite(out, tuple(args.seeds), studies)
    for name, tb in report.failures.items():
        print(f"ERROR {name}\n{tb}", file=sys.stderr)
    status = _report(report.checks)
    return 1 if report.failures else status


def cmd_bench(args) -> int:
    from .harness.bench import bench_inference, bench_models

    if args.run_dir:
        from .harness.train import restore_state
        from .nn import load_checkpoint

        cfg = ExperimentConfig.load(os.path.join(args.run_dir, "config.json"))
        nets, meta = load_checkpoint(os.path.join(args.run_dir, "checkpoint.ffck"))
        state = restore_state(nets, meta, cfg)
        flow, policies = state.flow, state.policies
    else:
        flow, policies = bench_models(args.agents, hidden=tuple(args.hidden), flow_steps=args.flow_steps)
    out = args.out or os.path.join(args.run_dir or default_out_root(), "bench.csv")
    res = bench_inference(flow, policies, args.trials, out_path=out)
    print(
        f"one-step: nfe={res.one_step_nfe} median={res.one_step_median * 1e3:.3f}ms p95={res.one_step_p95 * 1e3:.3f}ms\n"
        f"joint flow: nfe={res.flow_nfe} median={res.flow_median * 1e3:.3f}ms p95={res.flow_p95 * 1e3:.3f}ms\n"
        f"speedup {res.speedup:.2f}x (against the M-step flow; multi-step diffusion baselines are not benchmarked)"
    )
    return _report(
        {
            "one_step_nfe": res.one_step_nfe == len(policies.nets),
            "flow_nfe": res.flow_nfe == flow.flow_steps,
            f"speedup>={args.min_speedup:g}": res.speedup >= args.min_speedup,
        }
    )


def cmd_verify(args) -> int:
    from .harness.checks import landmark_checks, prop1_checks, prop2_check
    from .harness.train import read_bounds

    with open(os.path.join(args.run_dir, "config.json"), encoding="utf-8") as fh:
        env = json.load(fh)["env"]
    bounds_csv = os.path.join(args.run_dir, "bounds.csv")
    if env == "landmark":
        checks = landmark_checks(bounds_csv, os.path.join(args.run_dir, "metrics.csv"))
    else:
        bounds = read_bounds(bounds_csv)
        checks = {**prop1_checks(bounds), **prop2_check(bounds)}
    return _report(checks)


def cmd_plot(args) -> int:
    from .harness.plots import emit_plots

    for path in emit_plots(args.run_dir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factorflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an offline dataset as JSONL")
    _add_config_args(p)
    p.add_argument("--out", help="dataset path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train flow, critics and one-step agents")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("suite", help="run the didactic studies")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--studies", nargs="+", choices=["landmark", "pure_coordination", "xor", "payoff"])
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("bench", help="time one-step agents against the joint flow")
    p.add_argument("--run-dir", help="benchmark this run's checkpoint instead of fresh networks")
    p.add_argument("--out", help="bench.csv path")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--hidden", type=int, nargs="+", default=[512, 512, 512, 512])
    p.add_argument("--flow-steps", type=int, default=10)
    p.add_argument("--min-speedup", type=float, default=3.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="check a run's bounds.csv and metrics.csv")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render a run's CSVs as SVG")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
