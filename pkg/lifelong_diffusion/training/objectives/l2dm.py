"""
Lifelong objective: task error + memory enhancement + concept distillation
"""
import logging
from typing import Optional

import torch

from ...config import LossWeights
from ...diffusion.model import DenoiserModel
from ...diffusion.schedule import NoiseSchedule
from ..losses import LossTerms, combined_loss
from .base import StepInputs, TrainingObjective

_LOGGER = logging.getLogger(__name__)


class LifelongObjective(TrainingObjective):
    name = "l2dm"

    def __init__(
        self,
        weights: LossWeights,
        schedule: NoiseSchedule,
        use_tame: bool = True,
        use_ecd: bool = True,
        **kwargs,
    ) -> None:
        super().__init__(weights, schedule, **kwargs)
        self.use_tame = use_tame
        self.use_ecd = use_ecd
        _LOGGER.debug("Lifelong objective: tame=%s, ecd=%s", use_tame, use_ecd)

    @property
    def uses_teacher(self) -> bool:
        return self.use_ecd

    @property
    def uses_memory(self) -> bool:
        return self.use_tame or self.use_ecd

    def compute(
        self,
        model: DenoiserModel,
        teacher: Optional[DenoiserModel],
        inputs: StepInputs,
        generator: Optional[torch.Generator] = None,
    ) -> LossTerms:
        return combined_loss(
            model,
            teacher,
            inputs.task_batch,
            inputs.prior_batches,
            inputs.short_batches,
            self.weights,
            self.schedule,
            generator,
            task_index=inputs.task_index,
            use_tame=self.use_tame,
            use_ecd=self.use_ecd,
        )
