"""Procedural rendering of synthetic concepts.

Every concept noun maps to a shape family. A personalized concept is one
specific instance of its family: a fixed hue, a fixed stripe texture and a
fixed scale. Each rendered image draws a fresh pose (rotation, offset, size
jitter) so few-shot sets are distinct images of the same object.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb

from ..diffusion.text import COLOR_WORDS, CONCEPT_NOUNS
from ..errors import ConfigError, RangeError

_LOGGER = logging.getLogger(__name__)

SHAPE_FAMILIES: Dict[str, str] = {
    "dog": "circle",
    "toy": "square",
    "cat": "triangle",
    "backpack": "star",
    "teddybear": "cross",
}

# Generic hue of each color word, used for the base model and extractor corpus.
COLOR_HUES: Dict[str, float] = {
    "red": 0.0,
    "orange": 0.08,
    "yellow": 0.16,
    "green": 0.33,
    "cyan": 0.5,
    "blue": 0.62,
    "purple": 0.76,
    "pink": 0.9,
}

MIN_SHOTS = 3
MAX_SHOTS = 5
_BACKGROUND = 0.1
_SATURATION = 0.85
_VALUE = 0.9


@dataclass(frozen=True)
class ConceptSpec:
    concept_id: str
    token: str
    class_noun: str
    hue: float
    texture_seed: int
    scale: float = 0.6

    def __post_init__(self) -> None:
        if self.class_noun not in SHAPE_FAMILIES:
            raise ConfigError(
                "class_noun",
                f"{self.class_noun!r} is not one of {sorted(SHAPE_FAMILIES)}",
            )
        if not 0.0 <= self.hue < 1.0:
            raise ConfigError("hue", f"must lie in [0, 1), got {self.hue}")
        if not 0.1 <= self.scale <= 1.0:
            raise ConfigError("scale", f"must lie in [0.1, 1], got {self.scale}")

    @property
    def family(self) -> str:
        return SHAPE_FAMILIES[self.class_noun]

    @property
    def phrase(self) -> str:
        """The slot filler used in prompts, e.g. ``"V1 dog"``."""
        return f"{self.token} {self.class_noun}"


@dataclass(frozen=True)
class Pose:
    rotation: float
    offset_x: float
    offset_y: float
    size: float


def random_pose(rng: np.random.Generator) -> Pose:
    return Pose(
        rotation=float(rng.uniform(0.0, 2.0 * np.pi)),
        offset_x=float(rng.uniform(-0.25, 0.25)),
        offset_y=float(rng.uniform(-0.25, 0.25)),
        size=float(rng.uniform(0.85, 1.15)),
    )


def _family_mask(family: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if family == "circle":
        return u**2 + v**2 <= 1.0
    if family == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.8
    if family == "triangle":
        root3 = np.sqrt(3.0)
        return (v >= -0.5) & (root3 * u + v <= 1.0) & (-root3 * u + v <= 1.0)
    if family == "star":
        radius = np.sqrt(u**2 + v**2)
        angle = np.arctan2(v, u)
        return radius <= 0.45 + 0.55 * ((np.cos(5.0 * angle) + 1.0) / 2.0) ** 2
    if family == "cross":
        arm = 0.3
        vertical = (np.abs(u) <= arm) & (np.abs(v) <= 0.9)
        horizontal = (np.abs(v) <= arm) & (np.abs(u) <= 0.9)
        return vertical | horizontal
    raise ConfigError("family", f"unknown shape family {family!r}")


def _texture(texture_seed: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(texture_seed)
    frequency = rng.uniform(2.0, 5.0)
    orientation = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.cos(orientation) * x + np.sin(orientation) * y
    wave = np.sin(np.pi * frequency * direction + phase)
    return 0.75 + 0.25 * wave


def render_shape(
    family: str,
    hue: float,
    texture_seed: int,
    scale: float,
    pose: Pose,
    resolution: int,
) -> np.ndarray:
    """Rasterise one shape as an (H, W, 3) uint8 image."""
    axis = np.linspace(-1.0, 1.0, resolution)
    y, x = np.meshgrid(axis, axis, indexing="ij")
    cos, sin = np.cos(pose.rotation), np.sin(pose.rotation)
    dx, dy = x - pose.offset_x, y - pose.offset_y
    extent = scale * pose.size
    u = (cos * dx + sin * dy) / extent
    v = (-sin * dx + cos * dy) / extent

    inside = _family_mask(family, u, v)
    rgb = hsv_to_rgb(np.array([hue, _SATURATION, _VALUE]))
    shade = _texture(texture_seed, u, v)

    image = np.full((resolution, resolution, 3), _BACKGROUND)
    image[inside] = rgb[None, :] * shade[inside][:, None]
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_concept(spec: ConceptSpec, pose: Pose, resolution: int) -> np.ndarray:
    return render_shape(
        spec.family, spec.hue, spec.texture_seed, spec.scale, pose, resolution
    )


def generate_concept_images(
    spec: ConceptSpec,
    count: int,
    seed: int,
    resolution: int = 16,
) -> List[np.ndarray]:
    """Render ``count`` posed views of one concept; pure in (spec, seed)."""
    if not MIN_SHOTS <= count <= MAX_SHOTS:
        raise RangeError(f"a task holds {MIN_SHOTS} to {MAX_SHOTS} images, got {count}")
    rng = np.random.default_rng(seed)
    return [render_concept(spec, random_pose(rng), resolution) for _ in range(count)]


def render_generic(
    class_noun: str,
    color: str,
    rng: np.random.Generator,
    resolution: int,
    texture_seed: Optional[int] = None,
) -> Tuple[np.ndarray, float]:
    """A generic member of a family: jittered palette hue, random texture and scale."""
    hue = (COLOR_HUES[color] + rng.uniform(-0.02, 0.02)) % 1.0
    texture = int(rng.integers(0, 2**31 - 1)) if texture_seed is None else texture_seed
    scale = float(rng.uniform(0.45, 0.7))
    image = render_shape(
        SHAPE_FAMILIES[class_noun], hue, texture, scale, random_pose(rng), resolution
    )
    return image, hue


__all__ = [
    "COLOR_HUES",
    "COLOR_WORDS",
    "CONCEPT_NOUNS",
    "ConceptSpec",
    "Pose",
    "SHAPE_FAMILIES",
    "generate_concept_images",
    "random_pose",
    "render_concept",
    "render_generic",
    "render_shape",
]
