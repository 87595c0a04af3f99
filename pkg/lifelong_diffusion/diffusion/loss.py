"""Denoising objective shared by every training stage."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from ..errors import EmptyInputError
from .model import DenoiserModel
from .schedule import NoiseSchedule, add_noise
from .text import TokenSequence


@dataclass
class DenoisingBatch:
    """Clean latents (B, C, H, W) with padded token ids (B, s)."""

    latents: torch.Tensor
    token_ids: torch.Tensor

    def __len__(self) -> int:
        return int(self.latents.shape[0])

    @classmethod
    def from_tokens(
        cls, latents: torch.Tensor, tokens: Sequence[TokenSequence], max_tokens: int
    ) -> "DenoisingBatch":
        ids = torch.tensor(
            [sequence.padded(max_tokens) for sequence in tokens], dtype=torch.long
        )
        return cls(latents=latents, token_ids=ids)

    def subset(self, index: torch.Tensor) -> "DenoisingBatch":
        return DenoisingBatch(
            latents=self.latents[index], token_ids=self.token_ids[index]
        )

    def to(self, dtype: torch.dtype) -> "DenoisingBatch":
        return DenoisingBatch(latents=self.latents.to(dtype), token_ids=self.token_ids)


def noised_inputs(
    batch: DenoisingBatch,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator],
    timesteps: Optional[torch.Tensor] = None,
    noise: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Draw (t, eps) for a batch, timesteps first, and return (z_t, t, eps)."""
    if len(batch) == 0:
        raise EmptyInputError("denoising batch is empty")
    latents = batch.latents
    if timesteps is None:
        timesteps = torch.randint(
            1, schedule.num_timesteps + 1, (len(batch),), generator=generator
        )
    if noise is None:
        noise = torch.randn(latents.shape, generator=generator, dtype=latents.dtype)
    return add_noise(schedule, latents, timesteps, noise), timesteps, noise


def ldm_loss(
    model: DenoiserModel,
    batch: DenoisingBatch,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
    timesteps: Optional[torch.Tensor] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean squared error between the drawn noise and its prediction."""
    z_t, t, eps = noised_inputs(batch, schedule, generator, timesteps, noise)
    prediction, _ = model(z_t, model.embed(batch.token_ids), t)
    return F.mse_loss(prediction, eps)
