"""circle-qka - simulate and benchmark three-party circle-type quantum key agreement."""

from .version import __version__, __author__, __email__, __description__
from .adversary import AttackDescriptor, AttackKind, CollusionStrategy
from .analysis import (
    Convention,
    ExperimentPlan,
    ExperimentRunner,
    analytic_detection,
    efficiency,
    hop_abort_probability,
    run_experiment,
)
from .model import ProtocolParams
from .protocol import ProtocolRunner, RunRecord, run_protocol
from .cli import main

__all__ = [
    "__version__",
    "__author__",
    "__email__",
    "__description__",
    "AttackDescriptor",
    "AttackKind",
    "CollusionStrategy",
    "Convention",
    "ExperimentPlan",
    "ExperimentRunner",
    "analytic_detection",
    "efficiency",
    "hop_abort_probability",
    "run_experiment",
    "ProtocolParams",
    "ProtocolRunner",
    "RunRecord",
    "run_protocol",
    "main",
]
