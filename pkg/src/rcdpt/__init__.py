"""Radar-camera dense prediction transformer for depth estimation, on a small numpy autodiff engine."""

from .config import TrainConfig
from .data import Dataset, SceneSample, gen_scene
from .encoder import ConfigError, EncoderConfig
from .losses import MetricsReport, compute_metrics, total_loss
from .model import DepthModel, build_model, load_checkpoint, save_checkpoint
from .reassemble import FusionError, FusionMode, ReassembleConfig
from .tensor import GradientError, ShapeError, Tensor

__all__ = [
    "ConfigError", "Dataset", "DepthModel", "EncoderConfig", "FusionError", "FusionMode", "GradientError",
    "MetricsReport", "ReassembleConfig", "SceneSample", "ShapeError", "Tensor", "TrainConfig", "build_model",
    "compute_metrics", "gen_scene", "load_checkpoint", "save_checkpoint", "total_loss",
]
__version__ = "0.1.0"
