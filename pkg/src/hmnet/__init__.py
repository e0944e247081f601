"""Hierarchical memorizing convolution network for long-horizon forecasting."""

from .memory import PatternMemory, RetrievalResult, normalize_pattern
from .model import HMNet, HMNetConfig, LevelConfig, make_levels
from .optim import Adam, Parameter
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "HMNet",
    "HMNetConfig",
    "LevelConfig",
    "Parameter",
    "PatternMemory",
    "RetrievalResult",
    "Tensor",
    "backward",
    "make_levels",
    "no_grad",
    "normalize_pattern",
    "__version__",
]
