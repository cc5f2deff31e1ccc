"""Cascading multi-behavior graph convolution recommender (numpy/scipy)."""

from .cascade import CascadeParams, ModelConfig, cascade_forward, init_params
from .data import MultiBehaviorDataset, SplitDataset, generate_synthetic, leave_one_out_split, load_dataset
from .evaluation import MetricsReport, evaluate_split
from .train import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "CascadeParams",
    "ModelConfig",
    "MetricsReport",
    "MultiBehaviorDataset",
    "SplitDataset",
    "TrainConfig",
    "cascade_forward",
    "evaluate_split",
    "fit",
    "generate_synthetic",
    "init_params",
    "leave_one_out_split",
    "load_dataset",
]
