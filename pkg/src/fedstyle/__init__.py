"""Federated style-prototype learning simulator with FedAvg, FedProx and Local baselines."""

from .data import Dataset, SplitSpec, generate_synthetic, load_csv, save_csv, split
from .losses import LossWeights, StyleSet, StyleVector
from .nn import ModelDims, ModelParams, backward, forward, init_params, sgd_step
from .orchestrator import (
    ExperimentConfig,
    RoundMetrics,
    RunResult,
    run_experiment,
    run_suite,
    trailing_mean_accuracy,
)

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "LossWeights",
    "ModelDims",
    "ModelParams",
    "RoundMetrics",
    "RunResult",
    "SplitSpec",
    "StyleSet",
    "StyleVector",
    "backward",
    "forward",
    "generate_synthetic",
    "init_params",
    "load_csv",
    "run_experiment",
    "run_suite",
    "save_csv",
    "sgd_step",
    "split",
    "trailing_mean_accuracy",
]
