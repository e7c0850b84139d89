"""Hybrid recurrent-convolutional univariate time-series classifier with
exact numpy forward/backward passes, the original training recipe, and a
classifier-comparison statistics toolkit."""

from .model import ArchConfig, GruFcnModel, build, forward, load_checkpoint, parameter_count, save_checkpoint
from .train import LrSchedule, TrainRun, fit, lr_at

__all__ = [
    "ArchConfig",
    "GruFcnModel",
    "LrSchedule",
    "TrainRun",
    "build",
    "fit",
    "forward",
    "load_checkpoint",
    "lr_at",
    "parameter_count",
    "save_checkpoint",
]
