"""Config-driven experiment runner, result writers and CLI."""

from .config import DatasetSpec, EstimatorSpec, ExperimentConfig, SplitSpec, apply_overrides
from .output import emit_plot_data, emit_results, write_outputs
from .presets import PRESET_NAMES, preset
from .runner import ExperimentError, FitTimeout, ResultRow, aggregate, run_experiment

__all__ = [
    "DatasetSpec",
    "EstimatorSpec",
    "ExperimentConfig",
    "SplitSpec",
    "apply_overrides",
    "emit_plot_data",
    "emit_results",
    "write_outputs",
    "PRESET_NAMES",
    "preset",
    "ExperimentError",
    "FitTimeout",
    "ResultRow",
    "aggregate",
    "run_experiment",
]
