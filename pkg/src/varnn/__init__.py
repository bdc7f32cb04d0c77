"""VARNN: a feed-forward regressor with a compact error-driven memory."""

from .model import (
    VARIANTS,
    VarnnModel,
    VarnnParams,
    VarnnSpec,
    WindowInstance,
    backward,
    count_macs_per_window,
    count_parameters,
    init_params,
    rollout,
)
from .numkit import Rng
from .trainer import TrainConfig, fit

__version__ = "0.1.0"
