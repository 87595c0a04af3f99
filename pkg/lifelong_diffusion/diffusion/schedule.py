"""Linear beta schedule and the closed-form forward process."""
import logging
from dataclasses import dataclass
from typing import Union

import torch

from ..errors import ConfigError, DimensionError, RangeError

_LOGGER = logging.getLogger(__name__)

Timesteps = Union[int, torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """``alpha_bar[0] == 1`` is the clean image; ``beta[t - 1]`` drives step ``t``."""

    num_timesteps: int
    beta: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def T(self) -> int:  # noqa: N802
        return self.num_timesteps

    def check_timesteps(self, t: torch.Tensor, lowest: int = 0) -> None:
        if t.numel() and (int(t.min()) < lowest or int(t.max()) > self.num_timesteps):
            raise RangeError(f"timesteps must lie in [{lowest}, {self.num_timesteps}]")


def build_schedule(
    T: int, beta_start: float, beta_end: float  # noqa: N803
) -> NoiseSchedule:
    if T < 2:
        raise ConfigError("schedule.steps", f"need at least 2 steps, got {T}")
    if not 0.0 < beta_start < 1.0:
        raise ConfigError(
            "schedule.beta_start", f"must lie in (0, 1), got {beta_start}"
        )
    if not beta_start <= beta_end < 1.0:
        raise ConfigError(
            "schedule.beta_end", f"must lie in [beta_start, 1), got {beta_end}"
        )

    beta = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alpha_bar = torch.ones(T + 1, dtype=torch.float64)
    alpha_bar[1:] = torch.cumprod(1.0 - beta, dim=0)
    if alpha_bar[-1] >= 0.05:
        _LOGGER.warning(
            "Terminal alpha_bar %.4f is not below 0.05;"
            " samples start from a noisy image",
            float(alpha_bar[-1]),
        )
    return NoiseSchedule(num_timesteps=T, beta=beta, alpha_bar=alpha_bar)


def _as_timesteps(t: Timesteps, batch: int) -> torch.Tensor:
    if isinstance(t, int):
        return torch.full((batch,), t, dtype=torch.long)
    t = t.to(torch.long).reshape(-1)
    if t.numel() == 1:
        return t.expand(batch)
    if t.numel() != batch:
        raise DimensionError(f"{t.numel()} timesteps for a batch of {batch}")
    return t


def _coefficients(schedule: NoiseSchedule, t: torch.Tensor, like: torch.Tensor):
    alpha_bar = schedule.alpha_bar[t].to(like.dtype)
    shape = (-1,) + (1,) * (like.dim() - 1)
    return alpha_bar.sqrt().reshape(shape), (1.0 - alpha_bar).sqrt().reshape(shape)


def add_noise(
    schedule: NoiseSchedule, z0: torch.Tensor, t: Timesteps, eps: torch.Tensor
) -> torch.Tensor:
    """z_t = sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps.

    ``z0`` is batched (B, ...); ``t`` is an int or one timestep per item.
    """
    if z0.shape != eps.shape:
        raise DimensionError(
            f"noise shape {tuple(eps.shape)} does not match {tuple(z0.shape)}"
        )
    steps = _as_timesteps(t, z0.shape[0])
    schedule.check_timesteps(steps)
    signal, noise = _coefficients(schedule, steps, z0)
    return signal * z0 + noise * eps


def recover_noise(
    schedule: NoiseSchedule, z_t: torch.Tensor, z0: torch.Tensor, t: Timesteps
) -> torch.Tensor:
    """Invert :func:`add_noise` for ``eps`` (t >= 1)."""
    steps = _as_timesteps(t, z0.shape[0])
    schedule.check_timesteps(steps, lowest=1)
    signal, noise = _coefficients(schedule, steps, z0)
    return (z_t - signal * z0) / noise
