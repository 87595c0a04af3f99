"""Ancestral DDPM sampling with classifier-free guidance."""
import logging
from typing import List, Optional

import numpy as np
import torch

from ..errors import ConfigError
from ..seeding import make_generator
from .model import DenoiserModel
from .schedule import NoiseSchedule
from .text import ConditionEmbedding, Vocabulary, tokenize

_LOGGER = logging.getLogger(__name__)


def encode_text(prompt: str, vocabulary: Vocabulary, model: DenoiserModel):
    """Tokenize ``prompt`` and embed it with the model's text encoder.

    Returns ``(TokenSequence, ConditionEmbedding)`` with a batch of one.
    """
    tokens = tokenize(prompt, vocabulary, model.config.max_tokens)
    ids = torch.tensor([tokens.padded(model.config.max_tokens)], dtype=torch.long)
    return tokens, model.embed(ids)


def unconditional_embedding(model: DenoiserModel) -> ConditionEmbedding:
    return model.embed(model.unconditional_ids())


def sampling_timesteps(num_timesteps: int, steps: int) -> List[int]:
    """Evenly spaced timesteps from T down to 1."""
    if steps > num_timesteps:
        raise ConfigError(
            "sampling.steps", f"{steps} steps exceed the {num_timesteps}-step schedule"
        )
    if steps < 1:
        raise ConfigError("sampling.steps", "must be positive")
    if steps == 1:
        return [num_timesteps]
    grid = np.round(np.linspace(1, num_timesteps, steps)).astype(int)
    return [int(t) for t in grid[::-1]]


def initial_latent(
    model: DenoiserModel, count: int, generator: torch.Generator
) -> torch.Tensor:
    size = model.config.resolution
    shape = (count, model.config.channels, size, size)
    return torch.randn(shape, generator=generator)


def guided_noise(
    model: DenoiserModel,
    z_t: torch.Tensor,
    condition: Optional[ConditionEmbedding],
    unconditional: ConditionEmbedding,
    t: int,
    guidance_scale: float,
) -> torch.Tensor:
    eps_uncond, _ = model(z_t, unconditional, t)
    if condition is None:
        return eps_uncond
    eps_cond, _ = model(z_t, condition, t)
    return eps_uncond + guidance_scale * (eps_cond - eps_uncond)


def ddpm_step(
    schedule: NoiseSchedule,
    z_t: torch.Tensor,
    eps: torch.Tensor,
    t: int,
    t_prev: int,
    generator: torch.Generator,
) -> torch.Tensor:
    """One ancestral step from t to t_prev on the respaced chain."""
    alpha_bar = float(schedule.alpha_bar[t])
    alpha_bar_prev = float(schedule.alpha_bar[t_prev])
    beta = 1.0 - alpha_bar / alpha_bar_prev
    mean = (z_t - beta / (1.0 - alpha_bar) ** 0.5 * eps) / (1.0 - beta) ** 0.5
    if t_prev == 0:
        return mean
    variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype)
    return mean + variance**0.5 * noise


def decode(latent: torch.Tensor) -> torch.Tensor:
    """The codec is the identity at desk scale."""
    return latent


@torch.no_grad()
def _run_chain(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    condition: Optional[ConditionEmbedding],
    steps: int,
    guidance_scale: float,
    seed: int,
    count: int,
) -> torch.Tensor:
    if guidance_scale < 0:
        raise ConfigError("sampling.guidance_scale", "must be non-negative")
    timesteps = sampling_timesteps(schedule.num_timesteps, steps)
    generator = make_generator(seed)
    z = initial_latent(model, count, generator)
    unconditional = unconditional_embedding(model).expand(count)
    condition = condition.expand(count) if condition is not None else None
    for index, t in enumerate(timesteps):
        t_prev = timesteps[index + 1] if index + 1 < len(timesteps) else 0
        eps = guided_noise(model, z, condition, unconditional, t, guidance_scale)
        z = ddpm_step(schedule, z, eps, t, t_prev, generator)
    return decode(z)


def sample(
    model: DenoiserModel,
    prompt: str,
    schedule: NoiseSchedule,
    steps: int = 200,
    guidance_scale: float = 7.0,
    seed: int = 0,
    count: int = 1,
) -> torch.Tensor:
    """Draw ``count`` images for ``prompt``; deterministic given ``seed``."""
    model.eval()
    with torch.no_grad():
        _, condition = encode_text(prompt, model.vocabulary, model)
    return _run_chain(model, schedule, condition, steps, guidance_scale, seed, count)


def sample_unconditional(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    steps: int = 200,
    seed: int = 0,
    count: int = 1,
) -> torch.Tensor:
    model.eval()
    return _run_chain(model, schedule, None, steps, 0.0, seed, count)


def sample_many(
    model: DenoiserModel,
    prompt: str,
    schedule: NoiseSchedule,
    total: int,
    batch_size: int,
    steps: int,
    guidance_scale: float,
    seeds: List[int],
) -> torch.Tensor:
    """Sample ``total`` images in batches, batch ``i`` seeded with ``seeds[i]``."""
    images = []
    for index, start in enumerate(range(0, total, batch_size)):
        count = min(batch_size, total - start)
        images.append(
            sample(model, prompt, schedule, steps, guidance_scale, seeds[index], count)
        )
        _LOGGER.debug("Sampled %s/%s images for %r", start + count, total, prompt)
    return torch.cat(images, dim=0)


__all__ = [
    "ddpm_step",
    "decode",
    "encode_text",
    "guided_noise",
    "initial_latent",
    "sample",
    "sample_many",
    "sample_unconditional",
    "sampling_timesteps",
    "unconditional_embedding",
]
