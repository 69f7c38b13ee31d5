"""Joint localization and clock synchronization for UWB node networks.

The package splits into a measurement/state model (`model`), a deterministic
truth simulator (`simulate`), graph utilities (`topology`), numerical kernels
(`linalg`), four network estimators (`estimators`), accuracy metrics and
reports (`metrics`), scenario configuration (`config`), and an experiment
runner with a command line front end (`experiment`, `cli`).
"""

from .config import ScenarioConfig, parse_config
from .errors import (
    AlignmentError,
    ConfigError,
    LocsyncError,
    ModelError,
    NumericalError,
    ProtocolError,
    SingularityError,
    TopologyError,
)
from .estimators import (
    ALGORITHMS,
    CentralizedKalman,
    DiffusionKalman,
    JacobiLeastSquares,
    SubsystemKalman,
)
from .experiment import ExperimentResult, run_experiment, run_sweep
from .linalg import (
    binomial_update_chain,
    dici_or_invert,
    lband_approx_inverse,
    procrustes_align,
)
from .metrics import (
    ErrorReport,
    MobileReport,
    NodeErrors,
    centroid_distance_series,
    convergence_epoch,
    localization_error,
    sync_error,
)
from .model import ExchangeRecord, NodeState
from .simulate import (
    TruthWorld,
    Trajectory,
    advance_world,
    default_mobile_loop,
    make_world,
    room8_layout,
    simulate_epoch,
    simulate_exchange,
)
from .topology import Topology, build_topology

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AlignmentError",
    "CentralizedKalman",
    "ConfigError",
    "DiffusionKalman",
    "ErrorReport",
    "ExchangeRecord",
    "ExperimentResult",
    "JacobiLeastSquares",
    "LocsyncError",
    "MobileReport",
    "ModelError",
    "NodeErrors",
    "NodeState",
    "NumericalError",
    "ProtocolError",
    "ScenarioConfig",
    "SingularityError",
    "SubsystemKalman",
    "Topology",
    "TopologyError",
    "Trajectory",
    "TruthWorld",
    "advance_world",
    "binomial_update_chain",
    "build_topology",
    "centroid_distance_series",
    "convergence_epoch",
    "default_mobile_loop",
    "dici_or_invert",
    "lband_approx_inverse",
    "localization_error",
    "make_world",
    "parse_config",
    "procrustes_align",
    "room8_layout",
    "run_experiment",
    "run_sweep",
    "simulate_epoch",
    "simulate_exchange",
    "sync_error",
    "__version__",
]
