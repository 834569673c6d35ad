"""Optimal transport, mutual information and policy evaluation."""

from .evaluation import (
    METRIC_NAMES,
    FlowActor,
    MetricReport,
    OneStepActor,
    ReplayActor,
    evaluate_return,
    value_gap,
)
from .information import DEFAULT_BINS, mutual_information, pairwise_agent_mi
from .ot import MAX_SAMPLES, EmpiricalDistribution, coupling_rms, linear_assignment, w2_exact

__all__ = [
    "DEFAULT_BINS",
    "METRIC_NAMES",
    "MAX_SAMPLES",
    "EmpiricalDistribution",
    "FlowActor",
    "MetricReport",
    "OneStepActor",
    "ReplayActor",
    "coupling_rms",
    "evaluate_return",
    "linear_assignment",
    "mutual_information",
    "pairwise_agent_mi",
    "value_gap",
    "w2_exact",
]
