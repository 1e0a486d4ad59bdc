"""Variational group-sparse neural networks with pruning, bit-width assignment
and storage accounting, built on a small numpy autodiff core."""

from .errors import (
    BayesCompError, ChecksumError, ContractError, DimensionError, DomainError, ModelFileError,
    TrainingError, VersionError,
)
from .model import BayesNet, dense_arch, init_model, lenet5_arch, parse_arch
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BayesCompError", "BayesNet", "ChecksumError", "ContractError", "DimensionError", "DomainError",
    "ModelFileError", "TrainConfig", "TrainingError", "VersionError", "dense_arch", "init_model",
    "lenet5_arch", "parse_arch", "train",
]
