"""Lightweight information-split network for single-image infrared
super-resolution: tensor engine, model, training, evaluation, profiling."""

from .config import LisnConfig
from .model import LisnModel, build_lisn, lisn_loss
from .tensor import Parameter, Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "LisnConfig",
    "LisnModel",
    "build_lisn",
    "lisn_loss",
    "Tensor",
    "Parameter",
    "Tape",
    "__version__",
]
