"""Experiment orchestration: configuration, persistence and the pipeline stages."""

from coldstart.experiments.config import ExperimentConfig, load_config
from coldstart.experiments.pipeline import (
    RunResult,
    SweepTable,
    evaluate_mse,
    run_path_continuation,
    run_robustness_sweep,
)

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "SweepTable",
    "evaluate_mse",
    "load_config",
    "run_path_continuation",
    "run_robustness_sweep",
]
