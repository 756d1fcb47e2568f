"""Experiment harness: config parsing, Monte Carlo runners, CLI."""

from .config import ExperimentConfig, load_config, loads_config, normalize
from .experiments import (
    CheckResult,
    ExperimentReport,
    gate_config,
    replay_manifest,
    run_and_write,
    run_experiment,
)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "loads_config",
    "normalize",
    "CheckResult",
    "ExperimentReport",
    "gate_config",
    "replay_manifest",
    "run_and_write",
    "run_experiment",
]
