"""Experiment harness: configuration, training runner, aggregation, CLI."""

from mtreplay.harness.config import ExperimentConfig, load_config_file
from mtreplay.harness.runner import run_experiment
from mtreplay.harness.aggregate import aggregate

__all__ = ["ExperimentConfig", "load_config_file", "run_experiment", "aggregate"]
