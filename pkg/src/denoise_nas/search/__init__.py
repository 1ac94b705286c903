"""Supernet construction, the composite search loss, and architecture derivation."""

from .arch import ArchState, MixedStage, build_supernet, inherit_weights, mixed_stage_forward
from .engine import (
    FinetuneConfig,
    FinetuneResult,
    SearchDiverged,
    SearchRun,
    TrainConfig,
    derive_architecture,
    discrete_from_supernet,
    entropy_loss,
    evaluate,
    finetune,
    lambda_schedule,
    mean_normalized_entropy,
    penalty_loss,
    total_loss,
    train_network,
    train_supernet,
    training_loss,
)
from .space import StageRoster, default_roster, default_rosters, searchable

__all__ = [
    "ArchState",
    "FinetuneConfig",
    "FinetuneResult",
    "MixedStage",
    "SearchDiverged",
    "SearchRun",
    "StageRoster",
    "TrainConfig",
    "build_supernet",
    "default_roster",
    "default_rosters",
    "derive_architecture",
    "discrete_from_supernet",
    "entropy_loss",
    "evaluate",
    "finetune",
    "inherit_weights",
    "lambda_schedule",
    "mean_normalized_entropy",
    "mixed_stage_forward",
    "penalty_loss",
    "searchable",
    "total_loss",
    "train_network",
    "train_supernet",
    "training_loss",
]
