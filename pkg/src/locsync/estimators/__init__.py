"""Network estimators: one centralized reference and three distributed filters."""

from .base import EpochBatch, NetworkEstimatorBase, make_batch
from .centralized import CentralizedKalman
from .diffusion import DiffusionKalman
from .jacobi_ls import JacobiLeastSquares
from .subsystem import Subsystem, SubsystemKalman, build_subsystems

ALGORITHMS = {
    "ckal": CentralizedKalman,
    "dkal": DiffusionKalman,
    "mkal": SubsystemKalman,
    "opt": JacobiLeastSquares,
}

__all__ = [
    "ALGORITHMS",
    "CentralizedKalman",
    "DiffusionKalman",
    "EpochBatch",
    "JacobiLeastSquares",
    "NetworkEstimatorBase",
    "Subsystem",
    "SubsystemKalman",
    "build_subsystems",
    "make_batch",
]
