"""
Base training objective
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch

from ...config import LossWeights
from ...diffusion.loss import DenoisingBatch
from ...diffusion.model import DenoiserModel
from ...diffusion.schedule import NoiseSchedule
from ..losses import LossTerms

_LOGGER = logging.getLogger(__name__)


@dataclass
class StepInputs:
    """Everything one optimizer step of task ``task_index`` sees."""

    task_index: int
    task_batch: DenoisingBatch
    prior_batches: Dict[int, DenoisingBatch] = field(default_factory=dict)
    short_batches: Dict[int, DenoisingBatch] = field(default_factory=dict)


class TrainingObjective(ABC):
    """Abstract base class for per-task training objectives."""

    name = ""

    def __init__(self, weights: LossWeights, schedule: NoiseSchedule, **kwargs) -> None:
        self.weights = weights
        self.schedule = schedule

    @abstractmethod
    def compute(
        self,
        model: DenoiserModel,
        teacher: Optional[DenoiserModel],
        inputs: StepInputs,
        generator: Optional[torch.Generator] = None,
    ) -> LossTerms:
        """Return the loss terms of one step."""

    @property
    def uses_teacher(self) -> bool:
        return False

    @property
    def uses_memory(self) -> bool:
        return False

    def get_name(self) -> str:
        return self.name
