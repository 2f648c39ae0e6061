"""Experiment orchestration: synthetic corpus, training stages, inference, evaluation."""

from .config import ExperimentConfig, module_seed
from .synth import SyntheticDatasetSpec, synth_dataset

__all__ = ["ExperimentConfig", "SyntheticDatasetSpec", "module_seed", "synth_dataset"]
