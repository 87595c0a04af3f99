"""Inference-time attention guidance for multi-concept prompts."""
from .losses import (
    ActivationMask,
    GaussianSmoother,
    activation_masks,
    clul_loss,
    dal_loss,
    extract_mask,
    max_attention,
    oaa_loss,
    region_masks,
)
from .sampler import (
    GuidanceLossReport,
    GuidancePlan,
    guided_sample,
    neglect_statistic,
    refine_latent,
)

__all__ = [
    "ActivationMask",
    "GaussianSmoother",
    "GuidanceLossReport",
    "GuidancePlan",
    "activation_masks",
    "clul_loss",
    "dal_loss",
    "extract_mask",
    "guided_sample",
    "max_attention",
    "neglect_statistic",
    "oaa_loss",
    "refine_latent",
    "region_masks",
]
