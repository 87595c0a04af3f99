"""Shared tiny configurations and models."""
from typing import Any, Dict, Optional

import pytest
import torch
from torch import nn

from lifelong_diffusion.config import (
    ExperimentConfig,
    ExtractorConfig,
    ModelConfig,
    parse_config,
)
from lifelong_diffusion.data.concepts import ConceptSpec
from lifelong_diffusion.diffusion.model import DenoiserModel
from lifelong_diffusion.diffusion.schedule import NoiseSchedule, build_schedule
from lifelong_diffusion.diffusion.text import PAD_ID, ConditionEmbedding, Vocabulary
from lifelong_diffusion.evaluation.extractor import FeatureExtractor, freeze

TINY_MODEL = {
    "resolution": 8,
    "channels": 3,
    "base_channels": 8,
    "embed_dim": 8,
    "heads": 2,
    "max_tokens": 12,
    "personalized_slots": 4,
}

TINY_CONCEPTS = [
    {
        "concept_id": "dog",
        "token": "V1",
        "class_noun": "dog",
        "hue": 0.05,
        "texture_seed": 11,
        "scale": 0.6,
    },
    {
        "concept_id": "duck-toy",
        "token": "V2",
        "class_noun": "toy",
        "hue": 0.14,
        "texture_seed": 23,
        "scale": 0.55,
    },
    {
        "concept_id": "cat",
        "token": "V3",
        "class_noun": "cat",
        "hue": 0.58,
        "texture_seed": 37,
        "scale": 0.65,
    },
]


def tiny_config_data(
    output_dir: str = "runs/test", concepts: int = 2, **sections: Dict[str, Any]
) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "seed": 7,
        "output_dir": output_dir,
        "model": dict(TINY_MODEL),
        "schedule": {"steps": 20, "beta_start": 0.001, "beta_end": 0.3},
        "sampling": {"steps": 4, "guidance_scale": 3.0, "batch_size": 8},
        "train": {"steps": 3, "learning_rate": 0.01, "batch_size": 2},
        "pretrain": {
            "max_steps": 4,
            "batch_size": 8,
            "images_per_family": 4,
            "heldout_images": 4,
            "eval_every": 2,
            "patience": 3,
        },
        "prior": {"num_images": 4, "subsample": 2, "shots": 3},
        "bank": {"eta": 2, "beta_score": 1.0},
        "guidance": {"step_size": 5.0, "guided_fraction": 0.5},
        "extractor": {
            "feature_dim": 8,
            "hidden_channels": 4,
            "steps": 2,
            "batch_size": 8,
            "images_per_family": 4,
            "heldout_images": 4,
            "min_retrieval_accuracy": 0.0,
        },
        "evaluation": {
            "samples_per_prompt": 1,
            "prompts_per_concept": 1,
            "multi_concept_prompts": 1,
        },
        "concepts": [dict(concept) for concept in TINY_CONCEPTS[:concepts]],
    }
    for name, values in sections.items():
        data[name] = {**data.get(name, {}), **values}
    return data


def tiny_config(
    output_dir: str = "runs/test", concepts: int = 2, **sections: Dict[str, Any]
) -> ExperimentConfig:
    return parse_config(tiny_config_data(output_dir, concepts, **sections))


def tiny_model(seed: int = 0, dtype: torch.dtype = torch.float32) -> DenoiserModel:
    torch.manual_seed(seed)
    vocabulary = Vocabulary(TINY_MODEL["personalized_slots"])
    model = DenoiserModel(ModelConfig(**TINY_MODEL), vocabulary, 20)
    return model.to(dtype)


def tiny_extractor(seed: int = 0) -> FeatureExtractor:
    torch.manual_seed(seed)
    config = ExtractorConfig(feature_dim=8, hidden_channels=4, steps=2, batch_size=8)
    return freeze(FeatureExtractor(config))


class OffsetDenoiser(nn.Module):
    """Predicts the true noise of a zero image plus a constant offset.

    On zero latents ``z_t = sqrt(1 - alpha_bar[t]) * eps``, so the residual of
    every prediction is exactly ``offset``.
    """

    def __init__(self, schedule: NoiseSchedule, offset: float) -> None:
        super().__init__()
        self.schedule = schedule
        self.offset = offset
        self.scale = nn.Parameter(torch.ones(()))

    def embed(self, token_ids: torch.Tensor) -> ConditionEmbedding:
        matrix = torch.zeros(token_ids.shape[0], token_ids.shape[1], 1)
        return ConditionEmbedding(matrix=matrix, mask=token_ids != PAD_ID)

    def forward(
        self,
        z_t: torch.Tensor,
        condition: ConditionEmbedding,
        t: Any,
        capture_attention: bool = False,
    ):
        steps = torch.as_tensor(t).reshape(-1).expand(z_t.shape[0])
        noise_scale = (1.0 - self.schedule.alpha_bar[steps]).sqrt().to(z_t.dtype)
        noise_scale = noise_scale.reshape(-1, 1, 1, 1)
        return self.scale * z_t / noise_scale + self.offset, None


@pytest.fixture
def schedule() -> NoiseSchedule:
    return build_schedule(20, 0.001, 0.3)


@pytest.fixture
def model() -> DenoiserModel:
    return tiny_model()


@pytest.fixture
def extractor() -> FeatureExtractor:
    return tiny_extractor()


@pytest.fixture
def config(tmp_path) -> ExperimentConfig:
    return tiny_config(str(tmp_path / "run"))


@pytest.fixture
def concept() -> ConceptSpec:
    return ConceptSpec(**TINY_CONCEPTS[0])


def zero_batch_ids(
    count: int, length: int = 12, value: Optional[int] = 2
) -> torch.Tensor:
    ids = torch.full((count, length), PAD_ID, dtype=torch.long)
    ids[:, 0] = 1
    ids[:, 1] = value
    return ids
