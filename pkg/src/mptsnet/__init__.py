"""Multiscale periodic time-series classifier on a small numpy autodiff engine."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, load_ts, normalize, parse_ts, synth_planted_periods
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    FormatError,
    MPTSNetError,
    ShapeError,
    TrainingError,
    UsageError,
)
from .model import ModelConfig, forward, init_params
from .spectral import PeriodSet, identify_main_periods
from .train import TrainOptions, evaluate

__version__ = "0.1.0"
