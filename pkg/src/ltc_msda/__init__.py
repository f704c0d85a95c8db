"""Learning-to-Combine multi-source domain adaptation on dense numpy kernels."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentManifest, load_experiment, parse_config
from .inference import Metrics, evaluate, predict
from .state import TrainConfig, TrainState
from .trainer import Benchmark, fit, train_step

__all__ = [
    "Benchmark",
    "Checkpoint",
    "ExperimentManifest",
    "Metrics",
    "TrainConfig",
    "TrainState",
    "evaluate",
    "fit",
    "load_checkpoint",
    "load_experiment",
    "parse_config",
    "predict",
    "save_checkpoint",
    "train_step",
]
