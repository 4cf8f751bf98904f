"""Tabular laboratory for accelerated (Nesterov-extrapolated) iterative preference optimization."""

from .engine import InnerSolver, RunConfig, RunTrace, estimation_error, exact_update, extrapolate, minimize_loss, run_apo
from .errors import ConfigError, InvalidInput, NumericalError
from .instance import Instance
from .losses import LossKind, dpo_loss, ipo_loss, sppo_loss
from .policy import TabularPolicy, World, expected_reward, kl_divergence, normalize_log_policy, tv_distance
from .preferences import PreferenceDataset, PreferenceTable, RewardTable

__all__ = [
    "ConfigError",
    "InnerSolver",
    "Instance",
    "InvalidInput",
    "LossKind",
    "NumericalError",
    "PreferenceDataset",
    "PreferenceTable",
    "RewardTable",
    "RunConfig",
    "RunTrace",
    "TabularPolicy",
    "World",
    "dpo_loss",
    "estimation_error",
    "exact_update",
    "expected_reward",
    "extrapolate",
    "ipo_loss",
    "kl_divergence",
    "minimize_loss",
    "normalize_log_policy",
    "run_apo",
    "sppo_loss",
    "tv_distance",
]
