"""Attention losses for multi-concept guidance.

All maps are head-averaged cross-attention columns of shape (B, n_spatial).
Region masks and activation masks are 1 where a penalty applies.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ..diffusion.model import AttentionStack
from ..errors import DimensionError, EmptyTargetError, PairingError

_LOGGER = logging.getLogger(__name__)

MaskKey = Tuple[int, int]  # (layer, concept token position)


def region_masks(n_concepts: int, grid: Tuple[int, int]) -> torch.Tensor:
    """(n_concepts, H*W) forbidden-region masks.

    Concept ``i`` (in token order) may use vertical stripe ``i``; its mask is
    1 everywhere else. A single concept has nothing forbidden.
    """
    height, width = grid
    stripe = (torch.arange(width) * n_concepts) // width
    masks = torch.stack([(stripe != i).to(torch.float32) for i in range(n_concepts)])
    expanded = masks.unsqueeze(1).expand(n_concepts, height, width)
    return expanded.reshape(n_concepts, height * width)


class GaussianSmoother(nn.Module):
    """Normalized Gaussian blur with reflect padding."""

    def __init__(self, kernel_size: int = 3, sigma: float = 0.5) -> None:
        super().__init__()
        self.kernel_size = kernel_size
        coords = torch.arange(kernel_size, dtype=torch.float64) - (kernel_size - 1) / 2
        profile = torch.exp(-(coords**2) / (2 * sigma**2))
        kernel = profile[:, None] * profile[None, :]
        kernel = (kernel / kernel.sum()).view(1, 1, kernel_size, kernel_size)
        self.register_buffer("weight", kernel)

    def forward(self, maps: torch.Tensor, grid: Tuple[int, int]) -> torch.Tensor:
        """(B, H*W) -> smoothed (B, H*W)."""
        batch = maps.shape[0]
        pad = self.kernel_size // 2
        image = maps.reshape(batch, 1, *grid)
        if pad:
            image = F.pad(image, (pad, pad, pad, pad), mode="reflect")
        smoothed = F.conv2d(image, self.weight.to(maps.dtype))
        return smoothed.reshape(batch, -1)


def _check_mask(mask: torch.Tensor, n_spatial: int) -> None:
    if mask.shape[-1] != n_spatial:
        raise DimensionError(
            f"mask covers {mask.shape[-1]} cells, attention map has {n_spatial}"
        )


def clul_loss(
    attention: AttentionStack, concept_indices: Sequence[int], masks: torch.Tensor
) -> torch.Tensor:
    """Mean over layers and concepts of attention left in each forbidden region."""
    if len(concept_indices) == 0:
        return torch.zeros(())
    if masks.shape[0] != len(concept_indices):
        raise DimensionError(
            f"{masks.shape[0]} region masks for {len(concept_indices)} concept tokens"
        )
    layers = attention.layer_ids
    total = None
    for layer in layers:
        for position, token in enumerate(concept_indices):
            column = attention.column(layer, token)
            _check_mask(masks[position], column.shape[-1])
            term = ((column * masks[position].to(column.dtype)) ** 2).sum(dim=-1).mean()
            total = term if total is None else total + term
    return total / (len(layers) * len(concept_indices))


def max_attention(
    attention: AttentionStack,
    token: int,
    smoother: GaussianSmoother,
    layers: Sequence[int] = (),
) -> torch.Tensor:
    """(B,) max of the smoothed, layer-averaged map of ``token``."""
    averaged = attention.layer_mean(token, list(layers) or None)
    return smoother(averaged, attention.grid).max(dim=-1).values


def dal_loss(
    attention: AttentionStack,
    personalized_indices: Sequence[int],
    smoother: GaussianSmoother,
) -> torch.Tensor:
    """Sum over personalized tokens of one minus their smoothed max attention."""
    if len(personalized_indices) == 0:
        raise EmptyTargetError(
            "dynamic attend loss needs at least one personalized token"
        )
    total = None
    for token in personalized_indices:
        term = (1.0 - max_attention(attention, token, smoother)).mean()
        total = term if total is None else total + term
    return total


@dataclass(frozen=True)
class ActivationMask:
    token: int
    layer: int
    timestep: int
    mask: torch.Tensor

    @property
    def active(self) -> torch.Tensor:
        return self.mask.nonzero()


def extract_mask(column: torch.Tensor, threshold_ratio: float = 0.5) -> torch.Tensor:
    """1 where the map strictly exceeds ``threshold_ratio`` times its own max."""
    column = column.detach()
    threshold = threshold_ratio * column.max(dim=-1, keepdim=True).values
    return (column > threshold).to(column.dtype)


def activation_masks(
    attention: AttentionStack,
    concept_indices: Sequence[int],
    threshold_ratio: float,
    smoother: Optional[GaussianSmoother] = None,
) -> Dict[MaskKey, ActivationMask]:
    masks = {}
    for layer in attention.layer_ids:
        for token in concept_indices:
            column = attention.column(layer, token).detach()
            if smoother is not None:
                column = smoother(column, attention.grid)
            masks[(layer, token)] = ActivationMask(
                token=token,
                layer=layer,
                timestep=attention.timestep,
                mask=extract_mask(column, threshold_ratio),
            )
    return masks


def oaa_loss(
    attention: AttentionStack,
    concept_indices: Sequence[int],
    personalized_indices: Sequence[int],
    masks: Mapping[MaskKey, ActivationMask],
    pairing: Mapping[int, int],
) -> torch.Tensor:
    """Orthogonal attention loss restricted to each concept's activation mask.

    A personalized token paired with concept ``i`` is pulled to 1 inside
    ``i``'s mask; every other personalized token is pushed to 0 there. Each
    term is divided by the total attention of the personalized token.
    """
    if len(concept_indices) == 0 or len(personalized_indices) == 0:
        return torch.zeros(())
    for token in personalized_indices:
        if token not in pairing:
            raise PairingError(
                f"personalized token at position {token} has no paired concept"
            )
    layers = attention.layer_ids
    total = None
    for layer in layers:
        for concept in concept_indices:
            mask = masks[(layer, concept)].mask
            for token in personalized_indices:
                column = attention.column(layer, token)
                _check_mask(mask, column.shape[-1])
                inside = mask.to(column.dtype)
                residual = 1.0 - column if pairing[token] == concept else column
                covered = column.sum(dim=-1).clamp_min(1e-12)
                term = ((residual**2) * inside).sum(dim=-1) / covered
                total = term.mean() if total is None else total + term.mean()
    return total / (len(layers) * len(concept_indices))


__all__ = [
    "ActivationMask",
    "GaussianSmoother",
    "activation_masks",
    "clul_loss",
    "dal_loss",
    "extract_mask",
    "max_attention",
    "oaa_loss",
    "region_masks",
]
