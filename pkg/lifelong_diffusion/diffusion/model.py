"""Attention-exposing U-shaped noise predictor."""
import copy
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from ..config import ModelConfig
from ..errors import DimensionError, RangeError
from .text import PAD_ID, START_ID, ConditionEmbedding, TextEncoder, Vocabulary

_LOGGER = logging.getLogger(__name__)

# Cross-attention layer ids: 0 on the way down, 1 on the way up, both full resolution.
ATTENTION_LAYERS: Tuple[int, ...] = (0, 1)


@dataclass
class AttentionStack:
    """Head-averaged cross-attention of one forward call.

    ``maps[layer]`` has shape (B, n_spatial, s); each spatial row sums to one
    over tokens, and column ``i`` is token ``i``'s spatial map.
    """

    maps: Dict[int, torch.Tensor]
    timestep: int
    grid: Tuple[int, int]

    @property
    def layer_ids(self) -> List[int]:
        return sorted(self.maps)

    def column(self, layer: int, token: int) -> torch.Tensor:
        return self.maps[layer][:, :, token]

    def layer_mean(
        self, token: int, layers: Optional[List[int]] = None
    ) -> torch.Tensor:
        """(B, n_spatial) map of ``token`` averaged over the chosen layers."""
        chosen = layers or self.layer_ids
        return torch.stack([self.column(layer, token) for layer in chosen]).mean(dim=0)

    def select(self, layers: Optional[List[int]]) -> "AttentionStack":
        if not layers:
            return self
        maps = {layer: self.maps[layer] for layer in layers}
        return AttentionStack(maps, self.timestep, self.grid)


def _groups(channels: int) -> int:
    for groups in (8, 4, 2):
        if channels % groups == 0:
            return groups
    return 1


def timestep_features(t: torch.Tensor, dim: int, num_timesteps: int) -> torch.Tensor:
    """Sinusoidal features of t / T, shape (B, dim)."""
    half = dim // 2
    scaled = t.to(torch.float32) * (1000.0 / num_timesteps)
    exponents = torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    frequencies = torch.exp(-math.log(10000.0) * exponents)
    angles = scaled.unsqueeze(1) * frequencies.unsqueeze(0)
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1)
            if in_channels != out_channels
            else nn.Identity()
        )

    def forward(self, x: torch.Tensor, time: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(time)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Spatial queries attend over text tokens.

    Returns the output and the attention probabilities.
    """

    def __init__(self, channels: int, context_dim: int, heads: int) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = channels // heads
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(
        self, x: torch.Tensor, condition: ConditionEmbedding
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        batch, channels, height, width = x.shape
        tokens = condition.matrix.shape[1]
        h = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)

        q = self.to_q(h).view(batch, height * width, self.heads, self.head_dim)
        q = q.transpose(1, 2)
        k = self.to_k(condition.matrix).view(batch, tokens, self.heads, self.head_dim)
        k = k.transpose(1, 2)
        v = self.to_v(condition.matrix).view(batch, tokens, self.heads, self.head_dim)
        v = v.transpose(1, 2)

        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        logits = logits.masked_fill(~condition.mask[:, None, None, :], float("-inf"))
        probs = logits.softmax(dim=-1)  # (B, heads, HW, s)

        out = (probs @ v).transpose(1, 2).reshape(batch, height * width, channels)
        out = self.to_out(out).transpose(1, 2).reshape(batch, channels, height, width)
        return x + out, probs


class DenoiserModel(nn.Module):
    """epsilon-prediction network conditioned on text through cross-attention.

    Two resolutions (full and half); one cross-attention block on each side of
    the bottleneck, both at full resolution so their maps share a grid.
    """

    def __init__(
        self, config: ModelConfig, vocabulary: Vocabulary, num_timesteps: int
    ) -> None:
        super().__init__()
        self.config = config
        self.vocabulary = vocabulary
        self.num_timesteps = num_timesteps
        self.version = 0
        self.frozen = False

        width = config.base_channels
        time_dim = width * 2
        self.text_encoder = TextEncoder(
            vocabulary.base_size,
            vocabulary.personalized_slots,
            config.embed_dim,
            config.max_tokens,
        )
        self.time_mlp = nn.Sequential(
            nn.Linear(width, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.conv_in = nn.Conv2d(config.channels, width, 3, padding=1)
        self.down_block = ResBlock(width, width, time_dim)
        self.down_attention = CrossAttention(width, config.embed_dim, config.heads)
        self.downsample = nn.Conv2d(width, width * 2, 3, stride=2, padding=1)
        self.mid_block = ResBlock(width * 2, width * 2, time_dim)
        self.upsample = nn.Conv2d(width * 2, width, 3, padding=1)
        self.up_block = ResBlock(width * 2, width, time_dim)
        self.up_attention = CrossAttention(width, config.embed_dim, config.heads)
        self.norm_out = nn.GroupNorm(_groups(width), width)
        self.conv_out = nn.Conv2d(width, config.channels, 3, padding=1)

    def architecture(self) -> Dict[str, object]:
        return {
            "model": dict(self.config.__dict__),
            "num_timesteps": self.num_timesteps,
            "attention_layers": list(ATTENTION_LAYERS),
        }

    def embed(self, token_ids: torch.Tensor) -> ConditionEmbedding:
        """(B, s) token ids -> batched condition embedding."""
        return ConditionEmbedding(
            matrix=self.text_encoder(token_ids), mask=token_ids != PAD_ID
        )

    def unconditional_ids(self, batch: int = 1) -> torch.Tensor:
        ids = torch.full((batch, self.config.max_tokens), PAD_ID, dtype=torch.long)
        ids[:, 0] = START_ID
        return ids

    def forward(
        self,
        z_t: torch.Tensor,
        condition: ConditionEmbedding,
        t: Union[int, torch.Tensor],
        capture_attention: bool = False,
    ) -> Tuple[torch.Tensor, Optional[AttentionStack]]:
        batch = z_t.shape[0]
        if isinstance(t, int):
            steps = torch.full((batch,), t, dtype=torch.long)
        else:
            steps = t.reshape(-1).expand(batch)
        condition = condition.expand(batch)
        features = timestep_features(
            steps, self.config.base_channels, self.num_timesteps
        )
        time = self.time_mlp(features.to(z_t.dtype))

        h = self.conv_in(z_t)
        h = self.down_block(h, time)
        h, down_probs = self.down_attention(h, condition)
        skip = h
        h = self.mid_block(self.downsample(h), time)
        h = self.upsample(F.interpolate(h, size=skip.shape[-2:], mode="nearest"))
        h = self.up_block(torch.cat([h, skip], dim=1), time)
        h, up_probs = self.up_attention(h, condition)
        prediction = self.conv_out(F.silu(self.norm_out(h)))

        stack = None
        if capture_attention:
            stack = AttentionStack(
                maps={0: down_probs.mean(dim=1), 1: up_probs.mean(dim=1)},
                timestep=int(steps[0]),
                grid=(z_t.shape[-2], z_t.shape[-1]),
            )
        return prediction, stack

    def trainable_parameters(self) -> Iterator[nn.Parameter]:
        """Personalized token rows and the text-facing cross-attention projections.

        Only ``to_k`` and ``to_v`` read the condition; ``to_q`` and ``to_out``
        act on image features and stay frozen with the rest of the network.
        """
        yield self.text_encoder.personalized_embedding
        for attention in (self.down_attention, self.up_attention):
            yield attention.to_k.weight
            yield attention.to_v.weight

    def freeze_for_personalization(self) -> List[nn.Parameter]:
        trainable = list(self.trainable_parameters())
        ids = {id(parameter) for parameter in trainable}
        for parameter in self.parameters():
            parameter.requires_grad_(id(parameter) in ids)
        return trainable

    def register_concept(self, token: str, class_noun: str) -> int:
        """Register a personalized token, starting its embedding at the class noun."""
        known = self.vocabulary.is_registered(token)
        token_id = self.vocabulary.register_personalized(token, class_noun)
        if not known:
            source_id = self.vocabulary.token_id(class_noun)
            self.text_encoder.initialize_personalized(token_id, source_id)
            _LOGGER.info("Registered %s as a personalized %s", token, class_noun)
        return token_id


def count_parameters(parameters: Iterator[nn.Parameter]) -> int:
    return sum(parameter.numel() for parameter in parameters)


def snapshot(model: DenoiserModel) -> DenoiserModel:
    """Frozen deep copy; its parameters never change afterwards."""
    frozen = copy.deepcopy(model)
    frozen.vocabulary = model.vocabulary.copy()
    for parameter in frozen.parameters():
        parameter.requires_grad_(False)
    frozen.eval()
    frozen.frozen = True
    return frozen


def predict_noise(
    model: DenoiserModel,
    z_t: torch.Tensor,
    condition: ConditionEmbedding,
    t: Union[int, torch.Tensor],
    capture_attention: bool = False,
) -> Tuple[torch.Tensor, Optional[AttentionStack]]:
    steps = torch.as_tensor(t).reshape(-1)
    if int(steps.min()) < 1 or int(steps.max()) > model.num_timesteps:
        raise RangeError(f"timestep must lie in [1, {model.num_timesteps}]")
    expected = (model.config.channels, model.config.resolution, model.config.resolution)
    if z_t.dim() != 4 or tuple(z_t.shape[1:]) != expected:
        raise DimensionError(f"unexpected latent shape {tuple(z_t.shape)}")
    return model(z_t, condition, t, capture_attention=capture_attention)
