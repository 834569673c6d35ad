"""Didactic cooperative environments and offline dataset tooling."""

from .dataset import (
    FORMAT_VERSION,
    JointTrajectory,
    OfflineDataset,
    TransitionBatch,
    gen_landmark_dataset,
    gen_payoff_dataset,
    gen_pure_coordination_dataset,
    gen_xor_dataset,
    load_dataset,
    make_env,
    save_dataset,
    to_transitions,
)
from .landmark import LandmarkEnv, landmark_reward, optimal_assignment, scripted_actions
from .matrix import COORDINATION_TABLE, MatrixGameEnv, matrix_observation, xor_reward

__all__ = [
    "COORDINATION_TABLE",
    "FORMAT_VERSION",
    "JointTrajectory",
    "LandmarkEnv",
    "MatrixGameEnv",
    "OfflineDataset",
    "TransitionBatch",
    "gen_landmark_dataset",
    "gen_payoff_dataset",
    "gen_pure_coordination_dataset",
    "gen_xor_dataset",
    "landmark_reward",
    "load_dataset",
    "make_env",
    "matrix_observation",
    "optimal_assignment",
    "save_dataset",
    "scripted_actions",
    "to_transitions",
    "xor_reward",
]
