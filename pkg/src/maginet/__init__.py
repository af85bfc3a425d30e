"""Mask-aware graph imputation for incomplete sensor series.

The package is a small numpy-based library: a reverse-mode autodiff
tensor, graph spectral utilities, a masking/windowing data pipeline, the
imputation network itself, an Adam training loop, and evaluation
helpers. The ``maginet`` console script wires them into a pipeline.
"""

__version__ = "0.1.0"

from . import autodiff, data, evaluation, gradcheck, graph, model, training
from .autodiff import Tensor, no_grad
from .data import IncompleteWindow, Normalizer, SeriesMatrix
from .errors import (
    ContractError,
    EmptyMaskError,
    InputError,
    MagiNetError,
    NumericError,
    ShapeError,
)
from .graph import ChebyshevBasis, TrafficGraph
from .model import MagiNet, ModelConfig, ModelParams
from .training import TrainConfig

__all__ = [
    "__version__",
    "autodiff",
    "data",
    "evaluation",
    "gradcheck",
    "graph",
    "model",
    "training",
    "Tensor",
    "no_grad",
    "SeriesMatrix",
    "IncompleteWindow",
    "Normalizer",
    "TrafficGraph",
    "ChebyshevBasis",
    "MagiNet",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "MagiNetError",
    "ShapeError",
    "ContractError",
    "NumericError",
    "InputError",
    "EmptyMaskError",
]
