"""
Per-task training objectives
"""
from .base import StepInputs, TrainingObjective
from .factory import ObjectiveFactory, select_objective
from .l2dm import LifelongObjective
from .pdm import PriorPreservationObjective

__all__ = [
    "LifelongObjective",
    "ObjectiveFactory",
    "PriorPreservationObjective",
    "StepInputs",
    "TrainingObjective",
    "select_objective",
]
