"""Experiment orchestration and command-line interface."""

from .config import ConfigError, ExperimentConfig, generate_initial_conditions
from .pipeline import OfflineBundle, run_online_queries, run_training_pipeline

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "OfflineBundle",
    "generate_initial_conditions",
    "run_online_queries",
    "run_training_pipeline",
]
