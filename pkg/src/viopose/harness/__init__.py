"""Dataset generation, training, evaluation, analysis and the command line."""

from .config import PRESETS, ConfigError, DataConfig, RunConfig, TrainConfig, preset, resolve

__all__ = ["PRESETS", "ConfigError", "DataConfig", "RunConfig", "TrainConfig", "preset", "resolve"]
