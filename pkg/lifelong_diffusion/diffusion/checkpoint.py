"""Checkpoint directories: a JSON manifest plus one tensor blob per parameter.

Blob layout: ``b"LDT1"``, uint32 rank, uint32 dims, then little-endian
float32 values. Every blob's SHA-256 is recorded in the manifest.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np
import torch
from torch import nn

from ..config import ModelConfig, ScheduleConfig
from ..errors import IntegrityError, MissingArtifactError
from .model import DenoiserModel
from .schedule import NoiseSchedule, build_schedule
from .text import Vocabulary

_LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FORMAT_NAME = "lifelong-diffusion-checkpoint"
FORMAT_VERSION = 1
_MAGIC = b"LDT1"


@dataclass
class Checkpoint:
    model: DenoiserModel
    schedule: NoiseSchedule
    schedule_config: ScheduleConfig
    tag: str
    manifest: Dict[str, Any]


def encode_tensor(tensor: torch.Tensor) -> bytes:
    array = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4", copy=False)
    header = _MAGIC + np.array([array.ndim, *array.shape], dtype="<u4").tobytes()
    return header + np.ascontiguousarray(array).tobytes()


def decode_tensor(blob: bytes, name: str) -> torch.Tensor:
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise IntegrityError(name, "bad blob header")
    rank = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    if len(blob) < 8 + 4 * rank:
        raise IntegrityError(name, "truncated shape header")
    dims = np.frombuffer(blob, dtype="<u4", count=rank, offset=8)
    shape = tuple(int(d) for d in dims)
    offset = 8 + 4 * rank
    expected = offset + 4 * int(np.prod(shape, dtype=np.int64))
    if len(blob) != expected:
        raise IntegrityError(name, f"blob holds {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(shape)
    return torch.from_numpy(values.astype(np.float32))


def save_tensors(
    tensors: Mapping[str, torch.Tensor], directory: Path
) -> Dict[str, Dict[str, Any]]:
    records = {}
    for name, tensor in tensors.items():
        blob = encode_tensor(tensor)
        filename = f"{name}.bin"
        (directory / filename).write_bytes(blob)
        records[name] = {
            "file": filename,
            "shape": list(tensor.shape),
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
    return records


def load_tensors(
    records: Mapping[str, Mapping[str, Any]], directory: Path
) -> Dict[str, torch.Tensor]:
    tensors = {}
    for name, record in records.items():
        path = directory / record["file"]
        if not path.is_file():
            raise MissingArtifactError(path, f"missing blob for {name}")
        blob = path.read_bytes()
        if hashlib.sha256(blob).hexdigest() != record["sha256"]:
            raise IntegrityError(name, "checksum mismatch")
        tensor = decode_tensor(blob, name)
        if list(tensor.shape) != list(record["shape"]):
            raise IntegrityError(
                name, f"shape {list(tensor.shape)} != {record['shape']}"
            )
        tensors[name] = tensor
    return tensors


def save_module(
    module: nn.Module, directory: Union[str, Path], manifest: Dict[str, Any]
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest["format"] = FORMAT_NAME
    manifest["format_version"] = FORMAT_VERSION
    manifest["parameters"] = save_tensors(module.state_dict(), directory)
    manifest_text = json.dumps(manifest, indent=2, sort_keys=True)
    (directory / MANIFEST_NAME).write_text(manifest_text, encoding="utf-8")
    return directory


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise MissingArtifactError(path, "missing checkpoint manifest")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise IntegrityError(MANIFEST_NAME, f"unreadable manifest: {err}") from err
    if manifest.get("format") != FORMAT_NAME:
        raise IntegrityError(
            MANIFEST_NAME, f"unexpected format {manifest.get('format')!r}"
        )
    return manifest


def load_module_state(
    module: nn.Module, directory: Union[str, Path], manifest: Mapping[str, Any]
) -> None:
    tensors = load_tensors(manifest["parameters"], Path(directory))
    reference = module.state_dict()
    missing = sorted(set(reference) - set(tensors))
    if missing:
        raise IntegrityError(missing[0], "parameter missing from checkpoint")
    module.load_state_dict(
        {name: tensor.to(reference[name].dtype) for name, tensor in tensors.items()}
    )


def save_checkpoint(
    model: DenoiserModel,
    directory: Union[str, Path],
    schedule_config: ScheduleConfig,
    tag: str,
) -> Path:
    manifest = {
        "tag": tag,
        "version": model.version,
        "architecture": asdict(model.config),
        "num_timesteps": model.num_timesteps,
        "schedule": asdict(schedule_config),
        "vocabulary": model.vocabulary.state_dict(),
    }
    path = save_module(model, directory, manifest)
    _LOGGER.info("Saved checkpoint %s to %s", tag, path)
    return path


def load_checkpoint(directory: Union[str, Path]) -> Checkpoint:
    manifest = read_manifest(directory)
    config = ModelConfig(**manifest["architecture"])
    schedule_config = ScheduleConfig(**manifest["schedule"])
    vocabulary = Vocabulary.from_state(manifest["vocabulary"])
    model = DenoiserModel(config, vocabulary, manifest["num_timesteps"])
    load_module_state(model, directory, manifest)
    model.version = int(manifest["version"])
    schedule = build_schedule(
        schedule_config.steps, schedule_config.beta_start, schedule_config.beta_end
    )
    _LOGGER.debug(
        "Loaded checkpoint %s (version %s) from %s",
        manifest["tag"],
        model.version,
        directory,
    )
    return Checkpoint(
        model=model,
        schedule=schedule,
        schedule_config=schedule_config,
        tag=manifest["tag"],
        manifest=manifest,
    )
