"""Federated SGD with client-side differential privacy and a (T, b) planner."""

from .bounds import BoundConstants, Plan, make_plan
from .data import ClientPartition, Dataset, make_synthetic_dataset, partition_noniid
from .estimate import ProbeConfig, estimate_constants
from .federation import FederationSchedule, run_federation
from .mechanisms import DpMechanismSpec, Mechanism, PrivacyBudget

__all__ = [
    "BoundConstants",
    "ClientPartition",
    "Dataset",
    "DpMechanismSpec",
    "FederationSchedule",
    "Mechanism",
    "Plan",
    "PrivacyBudget",
    "ProbeConfig",
    "estimate_constants",
    "make_plan",
    "make_synthetic_dataset",
    "partition_noniid",
    "run_federation",
]

__version__ = "0.1.0"
