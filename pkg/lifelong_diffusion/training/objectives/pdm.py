"""
Prior-preservation objective (first task and plain fine-tuning)
"""
import logging
from typing import Optional

import torch

from ...diffusion.model import DenoiserModel
from ..losses import LossTerms, pdm_loss
from .base import StepInputs, TrainingObjective

_LOGGER = logging.getLogger(__name__)


class PriorPreservationObjective(TrainingObjective):
    """Task denoising error plus ``lam`` times the current class's prior error."""

    name = "pdm"

    def compute(
        self,
        model: DenoiserModel,
        teacher: Optional[DenoiserModel],
        inputs: StepInputs,
        generator: Optional[torch.Generator] = None,
    ) -> LossTerms:
        prior = inputs.prior_batches.get(inputs.task_index)
        total = pdm_loss(
            model,
            inputs.task_batch,
            prior,
            self.weights.lam,
            self.schedule,
            generator,
        )
        zero = torch.zeros_like(total)
        # the prior share is folded into the task column
        return LossTerms(task=total, tame=zero, ecd=zero)
