"""Pilot-driven configuration of reconfigurable intelligent surfaces.

The package simulates RIS-assisted multi-user downlink scenarios, probes
the surface with structured pilot configurations, trains a
permutation-equivariant network that maps received pilots directly to
phase shifts (no explicit channel estimation), pairs it with a WMMSE
precoder, and compares against non-learned baselines.
"""

from .autodiff import Tape, backward, finite_difference_check
from .baselines import coordinate_ascent, identity_phases, random_phases
from .channel import (
    Dataset,
    ScenarioConfig,
    ScenarioSample,
    compose_channel,
    generate_scenario,
    load_dataset,
    save_dataset,
)
from .estimator import RisNetEstimator
from .exceptions import (
    ConfigError,
    ContractError,
    CorruptDatasetError,
    EvaluationError,
    NumericalError,
    RisnetLabError,
    ShapeError,
)
from .linalg import CMatrix
from .network import (
    NetworkConfig,
    NetworkParams,
    forward,
    init_params,
    load_params,
    save_params,
)
from .precoder import Precoder, mrt, wmmse, wsr
from .probing import (
    PilotObservation,
    ProbeSchedule,
    extract_features,
    make_schedule,
    probe_config,
    simulate_pilots,
)
from .properties import PropertyReport, run_all, write_report_csv
from .training import TrainConfig, TrainLog, achieved_wsr, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "backward",
    "finite_difference_check",
    "coordinate_ascent",
    "identity_phases",
    "random_phases",
    "Dataset",
    "ScenarioConfig",
    "ScenarioSample",
    "compose_channel",
    "generate_scenario",
    "load_dataset",
    "save_dataset",
    "RisNetEstimator",
    "ConfigError",
    "ContractError",
    "CorruptDatasetError",
    "EvaluationError",
    "NumericalError",
    "RisnetLabError",
    "ShapeError",
    "CMatrix",
    "NetworkConfig",
    "NetworkParams",
    "forward",
    "init_params",
    "load_params",
    "save_params",
    "Precoder",
    "mrt",
    "wmmse",
    "wsr",
    "PilotObservation",
    "ProbeSchedule",
    "extract_features",
    "make_schedule",
    "probe_config",
    "simulate_pilots",
    "PropertyReport",
    "run_all",
    "write_report_csv",
    "TrainConfig",
    "TrainLog",
    "achieved_wsr",
    "evaluate",
    "train",
]
