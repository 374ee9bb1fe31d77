"""Experiment runner: scenario configs, dataset synthesis, studies, CLI."""

from .config import ScenarioConfig
from .datasets import generate_dataset

__all__ = ["ScenarioConfig", "generate_dataset"]
