"""Dual-prompt multimodal forecasting on a small numpy autodiff stack."""

from .data import TextedSeries, WindowSample, load_dataset, split_windows
from .datagen import GeneratorSpec, generate, generate_suite
from .estimator import DualPromptForecaster
from .exceptions import DualPromptError, ValidationError
from .network import VARIANTS, DualPromptNetwork, ModelConfig
from .training import TrainConfig, run_ablation, run_seeds, sweep_lookback

__all__ = [
    "VARIANTS",
    "DualPromptError",
    "DualPromptForecaster",
    "DualPromptNetwork",
    "GeneratorSpec",
    "ModelConfig",
    "TextedSeries",
    "TrainConfig",
    "ValidationError",
    "WindowSample",
    "generate",
    "generate_suite",
    "load_dataset",
    "run_ablation",
    "run_seeds",
    "split_windows",
    "sweep_lookback",
]

__version__ = "0.1.0"
