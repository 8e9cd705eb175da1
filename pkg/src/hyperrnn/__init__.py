"""End-to-end downlink channel acquisition for FDD massive MIMO.

Trainable uplink/downlink pilots, a sign-quantized feedback network, and a
hypernetwork-modulated recurrent estimator are optimized jointly against
the true downlink channel, entirely on a from-scratch reverse-mode autodiff
engine over numpy arrays.  A feedforward estimator without the uplink path
serves as the comparison baseline.
"""

from .config import ExperimentConfig
from .errors import (
    CheckpointMismatchError,
    DegeneratePilotError,
    DimensionError,
    DomainError,
    TrainingDivergedError,
)
from .networks import NetworkDims, init_baseline, init_hyperrnn, load_model, save_model
from .numerics import Rng, bessel_j0, c2r, r2c
from .training import TrainConfig, evaluate_model, nmse, nmse_db, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "TrainConfig",
    "NetworkDims",
    "Rng",
    "bessel_j0",
    "c2r",
    "r2c",
    "train",
    "evaluate_model",
    "nmse",
    "nmse_db",
    "init_hyperrnn",
    "init_baseline",
    "save_model",
    "load_model",
    "DimensionError",
    "DomainError",
    "DegeneratePilotError",
    "TrainingDivergedError",
    "CheckpointMismatchError",
]
