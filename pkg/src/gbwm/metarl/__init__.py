"""Dual-agent actor-critic training from scratch and seed-ensemble inference."""

from __future__ import annotations

from .curriculum import generate_scenario
from .ensemble import (
    CheckpointError,
    CheckpointVersionError,
    EnsemblePolicy,
    Member,
    MemberPolicy,
    PolicyEnsemble,
    infer_action,
    load_checkpoint,
    save_checkpoint,
)
from .nn import Adam, Mlp, MlpSpec, mlp_forward, mlp_gradient
from .ppo import Batch, NonFiniteError, PpoConfig, ppo_update
from .train import PROFILES, TrainingAborted, export_curves, profile_config, train

__all__ = [
    "Adam", "Batch", "CheckpointError", "CheckpointVersionError", "EnsemblePolicy", "Member",
    "MemberPolicy", "Mlp", "MlpSpec", "NonFiniteError", "PROFILES", "PolicyEnsemble", "PpoConfig",
    "TrainingAborted", "export_curves", "generate_scenario", "infer_action", "load_checkpoint",
    "mlp_forward", "mlp_gradient", "ppo_update", "profile_config", "save_checkpoint", "train",
]
