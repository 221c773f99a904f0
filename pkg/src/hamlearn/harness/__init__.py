"""Experiment configs, paired HL/reference runs and the command line."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import compare_curves, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "compare_curves", "load_config", "parse_config", "run_experiment"]
