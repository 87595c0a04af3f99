"""Conversion between latent tensors and lossless 8-bit images."""
from pathlib import Path
from typing import Union

import numpy as np
import torch
from PIL import Image

from .errors import IntegrityError


def quantize(latent: torch.Tensor) -> torch.Tensor:
    """Snap a latent in [-1, 1] onto the 8-bit grid so PNG storage is exact."""
    pixels = torch.round((latent.detach().clamp(-1.0, 1.0) + 1.0) * 127.5)
    return (pixels / 127.5 - 1.0).to(torch.float32)


def to_uint8(latent: torch.Tensor) -> np.ndarray:
    """(C, H, W) latent -> (H, W, C) uint8 array."""
    pixels = torch.round((latent.detach().clamp(-1.0, 1.0) + 1.0) * 127.5)
    return pixels.to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def from_uint8(array: np.ndarray) -> torch.Tensor:
    """(H, W, C) uint8 array -> (C, H, W) latent in [-1, 1]."""
    tensor = torch.from_numpy(np.ascontiguousarray(array)).to(torch.float32)
    return (tensor / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def save_image(latent: torch.Tensor, path: Union[str, Path]) -> None:
    Image.fromarray(to_uint8(latent)).save(path, format="PNG")


def load_image(path: Union[str, Path], record: object = None) -> torch.Tensor:
    try:
        with Image.open(path) as image:
            array = np.asarray(image.convert("RGB"))
    except (OSError, SyntaxError) as err:
        raise IntegrityError(
            record if record is not None else path, f"unreadable image: {err}"
        ) from err
    return from_uint8(array)
