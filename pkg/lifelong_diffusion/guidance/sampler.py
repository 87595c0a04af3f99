"""Sampling with attention-guided latent refinement.

Before the noise prediction of a guided step, the latent takes
``iterations`` gradient steps on the attention losses of the conditional
forward pass. Model parameters are never updated. With every toggle off the
chain is the plain sampler's chain, step for step.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch

from ..config import GuidanceConfig
from ..diffusion.model import AttentionStack, DenoiserModel
from ..diffusion.sampler import (
    ddpm_step,
    decode,
    encode_text,
    initial_latent,
    sampling_timesteps,
    unconditional_embedding,
)
from ..diffusion.schedule import NoiseSchedule
from ..diffusion.text import ConditionEmbedding, TokenSequence
from ..errors import ConfigError
from ..seeding import make_generator
from .losses import (
    GaussianSmoother,
    activation_masks,
    clul_loss,
    dal_loss,
    max_attention,
    oaa_loss,
    region_masks,
)

_LOGGER = logging.getLogger(__name__)

LOSS_NAMES = ("clul", "dal", "oaa")


@dataclass
class GuidancePlan:
    """Token routing and loss settings for one prompt."""

    concept_indices: Tuple[int, ...]
    personalized_indices: Tuple[int, ...]
    pairing: Dict[int, int]
    regions: torch.Tensor
    smoother: GaussianSmoother
    config: GuidanceConfig
    use_caa: bool
    use_oaa: bool

    @classmethod
    def from_tokens(
        cls,
        tokens: TokenSequence,
        grid: Tuple[int, int],
        config: GuidanceConfig,
        use_caa: bool,
        use_oaa: bool,
    ) -> "GuidancePlan":
        pairing = tokens.pairing() if use_oaa and tokens.personalized_indices else {}
        return cls(
            concept_indices=tokens.concept_indices,
            personalized_indices=tokens.personalized_indices,
            pairing=pairing,
            regions=region_masks(len(tokens.concept_indices), grid),
            smoother=GaussianSmoother(config.kernel_size, config.sigma),
            config=config,
            use_caa=use_caa,
            use_oaa=use_oaa,
        )

    @property
    def active(self) -> bool:
        return self.use_caa or self.use_oaa

    def _select(self, stack: AttentionStack) -> AttentionStack:
        return stack.select(list(self.config.layers))

    def losses(
        self, stack: AttentionStack, enabled_only: bool = True
    ) -> Dict[str, torch.Tensor]:
        """Loss values on ``stack``; disabled or target-less losses are zero."""
        stack = self._select(stack)
        zero = torch.zeros(())
        values = {name: zero for name in LOSS_NAMES}
        caa = self.use_caa or not enabled_only
        oaa = self.use_oaa or not enabled_only
        if caa and self.concept_indices:
            values["clul"] = clul_loss(stack, self.concept_indices, self.regions)
        if caa and self.personalized_indices:
            values["dal"] = dal_loss(stack, self.personalized_indices, self.smoother)
        if oaa and self.concept_indices and self.personalized_indices and self.pairing:
            smoother = self.smoother if self.config.mask_from_smoothed else None
            masks = activation_masks(
                stack, self.concept_indices, self.config.threshold_ratio, smoother
            )
            values["oaa"] = oaa_loss(
                stack,
                self.concept_indices,
                self.personalized_indices,
                masks,
                self.pairing,
            )
        return values

    def max_attentions(self, stack: AttentionStack) -> Dict[int, float]:
        stack = self._select(stack)
        return {
            token: float(max_attention(stack, token, self.smoother).mean())
            for token in self.personalized_indices
        }


@dataclass
class GuidanceLossReport:
    token_labels: Dict[int, str]
    rows: List[dict] = field(default_factory=list)

    def record(
        self,
        timestep: int,
        guided: bool,
        losses: Dict[str, torch.Tensor],
        maxima: Dict[int, float],
    ) -> None:
        row = {"timestep": timestep, "guided": guided}
        row.update({f"L_{name.upper()}": float(losses[name]) for name in LOSS_NAMES})
        for token, value in maxima.items():
            row[f"max_{self.token_labels[token]}"] = value
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        columns = ["timestep", "guided"] + [f"L_{name.upper()}" for name in LOSS_NAMES]
        columns += [f"max_{label}" for label in self.token_labels.values()]
        return pd.DataFrame(self.rows, columns=columns)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.8g")

    @property
    def neglect(self) -> Optional[float]:
        """Smallest personalized-token max attention at the last guided step.

        Falls back to the last step when no step was guided.
        """
        if not self.rows or not self.token_labels:
            return None
        guided = [row for row in self.rows if row["guided"]]
        row = guided[-1] if guided else self.rows[-1]
        return min(row[f"max_{label}"] for label in self.token_labels.values())


def token_labels(tokens: TokenSequence) -> Dict[int, str]:
    words = tokens.raw_text.split()
    return {position: words[position - 1] for position in tokens.personalized_indices}


def guided_window(steps: int, fraction: float) -> int:
    """Number of leading sampling steps that are refined."""
    return int(round(steps * fraction))


def step_size_at(config: GuidanceConfig, index: int, steps: int) -> float:
    return config.step_size * (1.0 - index / steps)


def refine_latent(
    model: DenoiserModel,
    z_t: torch.Tensor,
    condition: ConditionEmbedding,
    t: int,
    plan: GuidancePlan,
    step_size: float,
    iterations: int = 1,
) -> torch.Tensor:
    """Gradient steps on the enabled attention losses with respect to ``z_t`` only."""
    z = z_t.detach()
    for _ in range(iterations):
        z_var = z.clone().requires_grad_(True)
        with torch.enable_grad():
            _, stack = model(z_var, condition, t, capture_attention=True)
            total = sum(plan.losses(stack).values())
            if not isinstance(total, torch.Tensor) or not total.requires_grad:
                return z
            (grad,) = torch.autograd.grad(total, [z_var])
        z = (z_var - step_size * grad).detach()
    return z


def guided_sample(
    model: DenoiserModel,
    prompt: str,
    schedule: NoiseSchedule,
    config: GuidanceConfig,
    steps: int = 200,
    guidance_scale: float = 7.0,
    seed: int = 0,
    count: int = 1,
    use_caa: Optional[bool] = None,
    use_oaa: Optional[bool] = None,
) -> Tuple[torch.Tensor, GuidanceLossReport]:
    use_caa = config.use_caa if use_caa is None else use_caa
    use_oaa = config.use_oaa if use_oaa is None else use_oaa
    model.eval()
    with torch.no_grad():
        tokens, condition = encode_text(prompt, model.vocabulary, model)
    grid = (model.config.resolution, model.config.resolution)
    plan = GuidancePlan.from_tokens(tokens, grid, config, use_caa, use_oaa)
    report = GuidanceLossReport(token_labels=token_labels(tokens))

    if guidance_scale < 0:
        raise ConfigError("sampling.guidance_scale", "must be non-negative")
    timesteps = sampling_timesteps(schedule.num_timesteps, steps)
    window = guided_window(len(timesteps), config.guided_fraction)
    if plan.active and window == 0:
        _LOGGER.warning(
            "Guidance window is empty for %s sampling steps", len(timesteps)
        )

    generator = make_generator(seed)
    with torch.no_grad():
        z = initial_latent(model, count, generator)
        unconditional = unconditional_embedding(model).expand(count)
        condition = condition.expand(count)

    for index, t in enumerate(timesteps):
        t_prev = timesteps[index + 1] if index + 1 < len(timesteps) else 0
        step_size = step_size_at(config, index, len(timesteps))
        guided = (
            plan.active and index < window and step_size > 0 and config.iterations > 0
        )
        if guided:
            z = refine_latent(
                model, z, condition, t, plan, step_size, config.iterations
            )
        with torch.no_grad():
            eps_uncond, _ = model(z, unconditional, t)
            eps_cond, stack = model(z, condition, t, capture_attention=True)
            eps = eps_uncond + guidance_scale * (eps_cond - eps_uncond)
            losses = plan.losses(stack, enabled_only=False)
            report.record(t, guided, losses, plan.max_attentions(stack))
            z = ddpm_step(schedule, z, eps, t, t_prev, generator)
    _LOGGER.debug("Guided sample of %r: neglect %s", prompt, report.neglect)
    return decode(z), report


def neglect_statistic(
    model: DenoiserModel,
    prompt: str,
    schedule: NoiseSchedule,
    config: GuidanceConfig,
    seeds: Sequence[int],
    steps: int,
    guidance_scale: float,
    use_caa: bool,
) -> List[Optional[float]]:
    """Neglect statistic per seed with OAA off, CAA on or off."""
    return [
        guided_sample(
            model,
            prompt,
            schedule,
            config,
            steps,
            guidance_scale,
            seed,
            1,
            use_caa,
            False,
        )[1].neglect
        for seed in seeds
    ]
