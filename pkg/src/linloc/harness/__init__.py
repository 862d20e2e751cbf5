"""Experiment harness: configs, seeded Monte Carlo runs, outputs and the CLI."""

from .config import ExperimentConfig, load_config, preset_doc
from .runner import MetricsLog, ReplicateLog, emit_outputs, replicate_rngs, run_experiment
from .validate import validate_geometry

__all__ = [
    "ExperimentConfig",
    "MetricsLog",
    "ReplicateLog",
    "emit_outputs",
    "load_config",
    "preset_doc",
    "replicate_rngs",
    "run_experiment",
    "validate_geometry",
]
