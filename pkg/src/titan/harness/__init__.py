"""Experiment harness: configs, runners, image and checkpoint I/O, CLI."""

from .config import ConfigError, ExperimentConfig, load_config, resolve_config
from .runs import (
    DivergenceError,
    RunReport,
    run_ct,
    run_experiment,
    run_lipschitz_sweep,
    run_superres,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "resolve_config",
    "DivergenceError",
    "RunReport",
    "run_ct",
    "run_experiment",
    "run_lipschitz_sweep",
    "run_superres",
]
