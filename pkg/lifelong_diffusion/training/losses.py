"""Training objectives: prior preservation, rehearsal (TAME) and distillation (ECD).

Each function draws its timesteps and noise from ``generator`` in a fixed
order (task batch, then rehearsal batches by task, then prior batches by task,
then distillation batches by task) so a composite loss equals the sum of its
constituents evaluated in that order from the same generator state.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import torch
import torch.nn.functional as F

from ..config import LossWeights
from ..diffusion.loss import DenoisingBatch, ldm_loss, noised_inputs
from ..diffusion.model import DenoiserModel
from ..diffusion.schedule import NoiseSchedule
from ..errors import MissingPriorError, MissingTeacherError

_LOGGER = logging.getLogger(__name__)

BatchesByTask = Mapping[int, DenoisingBatch]


@dataclass
class LossTerms:
    task: torch.Tensor
    tame: torch.Tensor
    ecd: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.task + self.tame + self.ecd

    def as_row(self, step: int) -> dict:
        return {
            "step": step,
            "task_loss": float(self.task),
            "tame_loss": float(self.tame),
            "ecd_loss": float(self.ecd),
            "total": float(self.total),
        }


def _zero(like: DenoisingBatch) -> torch.Tensor:
    return torch.zeros((), dtype=like.latents.dtype)


def _non_empty(batches: Optional[BatchesByTask]) -> dict:
    return {
        task: batch
        for task, batch in sorted((batches or {}).items())
        if len(batch) > 0
    }


def pdm_loss(
    model: DenoiserModel,
    task_batch: DenoisingBatch,
    prior_batch: Optional[DenoisingBatch],
    lam: float,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Task denoising error plus ``lam`` times the prior denoising error."""
    task = ldm_loss(model, task_batch, schedule, generator)
    if prior_batch is None or len(prior_batch) == 0:
        if lam > 0:
            raise MissingPriorError(
                "prior-preservation weight is set but the prior batch is empty"
            )
        return task
    return task + lam * ldm_loss(model, prior_batch, schedule, generator)


def tame_loss(
    model: DenoiserModel,
    short_batches: Optional[BatchesByTask],
    prior_batches: Optional[BatchesByTask],
    alpha: float,
    beta_tame: float,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
    task_index: int = 2,
) -> torch.Tensor:
    """alpha * rehearsal errors per learned task + beta * prior errors per class."""
    short = _non_empty(short_batches)
    priors = _non_empty(prior_batches)
    reference = next(iter({**short, **priors}.values()), None)
    total = torch.zeros(()) if reference is None else _zero(reference)
    if task_index <= 1:
        return total

    if alpha > 0:
        if not short:
            _LOGGER.warning(
                "Short-term memory is empty at task %s; rehearsal term is zero",
                task_index,
            )
        for batch in short.values():
            total = total + alpha * ldm_loss(model, batch, schedule, generator)
    if beta_tame > 0:
        for batch in priors.values():
            total = total + beta_tame * ldm_loss(model, batch, schedule, generator)
    return total


def ecd_loss(
    student: DenoiserModel,
    teacher: Optional[DenoiserModel],
    short_batches: Optional[BatchesByTask],
    gamma: float,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """gamma * sum over learned tasks of the student-teacher noise-prediction gap."""
    if teacher is None:
        raise MissingTeacherError("distillation needs the previous task's snapshot")
    short = _non_empty(short_batches)
    if not short:
        return torch.zeros(())
    total = _zero(next(iter(short.values())))
    if gamma == 0:
        return total
    for batch in short.values():
        z_t, t, _ = noised_inputs(batch, schedule, generator)
        student_prediction, _ = student(z_t, student.embed(batch.token_ids), t)
        with torch.no_grad():
            teacher_prediction, _ = teacher(z_t, teacher.embed(batch.token_ids), t)
        distance = F.mse_loss(student_prediction, teacher_prediction.detach())
        total = total + gamma * distance
    return total


def combined_loss(
    model: DenoiserModel,
    teacher: Optional[DenoiserModel],
    task_batch: DenoisingBatch,
    prior_batches: Optional[BatchesByTask],
    short_batches: Optional[BatchesByTask],
    weights: LossWeights,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
    task_index: int = 2,
    use_tame: bool = True,
    use_ecd: bool = True,
) -> LossTerms:
    """Task error + TAME + ECD.

    With TAME off the prior term falls back to ``lam`` times the current
    class's prior error, so both flags off is exactly :func:`pdm_loss`.
    """
    task = ldm_loss(model, task_batch, schedule, generator)
    if use_tame:
        tame = tame_loss(
            model,
            short_batches,
            prior_batches,
            weights.alpha,
            weights.beta_tame,
            schedule,
            generator,
            task_index,
        )
    else:
        current = (prior_batches or {}).get(task_index)
        if current is None or len(current) == 0:
            if weights.lam > 0:
                raise MissingPriorError(f"no prior batch for task {task_index}")
            tame = torch.zeros_like(task)
        else:
            tame = weights.lam * ldm_loss(model, current, schedule, generator)
    ecd = torch.zeros_like(task)
    if use_ecd:
        ecd = ecd_loss(
            model, teacher, short_batches, weights.gamma, schedule, generator
        )
    return LossTerms(task=task, tame=tame.to(task.dtype), ecd=ecd.to(task.dtype))
