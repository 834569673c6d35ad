"""Training loop, experiment suite, benchmarks, plots and the command line."""

from .bench import BenchResult, bench_inference, bench_models
from .config import ExperimentConfig
from .plots import emit_plots
from .suite import SuiteReport, run_didactic_suite
from .train import RunArtifacts, TrainingAborted, TrainState, read_bounds, read_metrics, train

__all__ = [
    "BenchResult",
    "SuiteReport",
    "bench_inference",
    "bench_models",
    "emit_plots",
    "run_didactic_suite",
    "ExperimentConfig",
    "RunArtifacts",
    "TrainState",
    "TrainingAborted",
    "read_bounds",
    "read_metrics",
    "train",
]
