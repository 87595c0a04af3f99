"""Lifelong training: objectives, per-task optimisation and teacher snapshots."""
from .losses import LossTerms, combined_loss, ecd_loss, pdm_loss, tame_loss
from .objectives import (
    ObjectiveFactory,
    StepInputs,
    TrainingObjective,
    select_objective,
)
from .trainer import (
    LifelongState,
    TaskResult,
    load_training_log,
    save_training_log,
    train_task,
)

__all__ = [
    "LifelongState",
    "LossTerms",
    "ObjectiveFactory",
    "StepInputs",
    "TaskResult",
    "TrainingObjective",
    "combined_loss",
    "ecd_loss",
    "load_training_log",
    "pdm_loss",
    "save_training_log",
    "select_objective",
    "tame_loss",
    "train_task",
]
