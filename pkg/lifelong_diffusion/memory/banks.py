"""Long-term and short-term memory banks and their on-disk format.

A bank directory holds ``index.jsonl``: a header line followed by one record
per entry. Features and scores are stored as ``float.hex`` strings so they
round-trip bit-exactly; short-term images are lossless PNG files.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Union

import numpy as np
import torch

from ..diffusion.loss import DenoisingBatch
from ..diffusion.text import Vocabulary, tokenize
from ..errors import DuplicateTaskError, IntegrityError, MissingArtifactError
from ..imaging import load_image, quantize, save_image

_LOGGER = logging.getLogger(__name__)

INDEX_NAME = "index.jsonl"
BANK_FORMAT = "lifelong-diffusion-bank"
BANK_VERSION = 1


class FeatureEncoder(Protocol):
    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        """(N, C, H, W) images -> (N, d) unit-norm features."""


@dataclass(frozen=True)
class LongTermEntry:
    feature: np.ndarray
    prompt: str
    task_index: int


@dataclass(frozen=True)
class ShortTermEntry:
    image: torch.Tensor
    prompt: str
    task_index: int
    score: float


@dataclass
class LongTermBank:
    entries: List[LongTermEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def tasks(self) -> List[int]:
        return sorted({entry.task_index for entry in self.entries})

    def for_task(self, task_index: int) -> List[LongTermEntry]:
        return [entry for entry in self.entries if entry.task_index == task_index]


@dataclass
class ShortTermBank:
    entries: List[ShortTermEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def tasks(self) -> List[int]:
        return sorted({entry.task_index for entry in self.entries})

    def batches(
        self, vocabulary: Vocabulary, max_tokens: int
    ) -> Dict[int, DenoisingBatch]:
        """One rehearsal batch per learned task."""
        grouped: Dict[int, DenoisingBatch] = {}
        for task in self.tasks:
            chosen = [entry for entry in self.entries if entry.task_index == task]
            images = torch.stack([entry.image for entry in chosen])
            tokens = [
                tokenize(entry.prompt, vocabulary, max_tokens) for entry in chosen
            ]
            grouped[task] = DenoisingBatch.from_tokens(images, tokens, max_tokens)
        return grouped


def normalize(features: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.normalize(features, dim=-1)


def update_long_term(
    bank: LongTermBank,
    task_index: int,
    images: torch.Tensor,
    prompts: Sequence[str],
    extractor: FeatureEncoder,
) -> LongTermBank:
    """Append one task's real-image features and prompts; earlier entries stay."""
    if task_index in bank.tasks:
        raise DuplicateTaskError(f"task {task_index} is already in the long-term bank")
    with torch.no_grad():
        features = normalize(extractor.encode_images(images).to(torch.float64))
    added = [
        LongTermEntry(
            feature=features[i].cpu().numpy(), prompt=prompts[i], task_index=task_index
        )
        for i in range(len(prompts))
    ]
    _LOGGER.info(
        "Long-term bank: +%s entries for task %s (%s total)",
        len(added),
        task_index,
        len(bank) + len(added),
    )
    return LongTermBank(entries=list(bank.entries) + added)


def _hex(values: np.ndarray) -> List[str]:
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    return [float(value).hex() for value in flat]


def _unhex(values: Sequence[str]) -> np.ndarray:
    return np.array([float.fromhex(value) for value in values], dtype=np.float64)


def save_bank(
    bank: Union[LongTermBank, ShortTermBank], directory: Union[str, Path]
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kind = "long" if isinstance(bank, LongTermBank) else "short"
    header = {
        "format": BANK_FORMAT,
        "version": BANK_VERSION,
        "kind": kind,
        "count": len(bank),
    }
    lines = [json.dumps(header)]
    for index, entry in enumerate(bank.entries):
        record = {"id": index, "task": entry.task_index, "prompt": entry.prompt}
        if isinstance(entry, LongTermEntry):
            record["feature"] = _hex(entry.feature)
        else:
            filename = f"{index:04d}.png"
            save_image(entry.image, directory / filename)
            record["image"] = filename
            digest = hashlib.sha256((directory / filename).read_bytes())
            record["sha256"] = digest.hexdigest()
            record["score"] = float(entry.score).hex()
        lines.append(json.dumps(record))
    (directory / INDEX_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _LOGGER.debug("Saved %s-term bank (%s entries) to %s", kind, len(bank), directory)
    return directory


def _parse_record(line: str, position: int) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as err:
        raise IntegrityError(position, f"unreadable record: {err}") from err
    if not isinstance(record, dict) or "task" not in record or "prompt" not in record:
        raise IntegrityError(position, "record lacks task or prompt")
    return record


def load_bank(
    directory: Union[str, Path], expected_kind: Optional[str] = None
) -> Union[LongTermBank, ShortTermBank]:
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    if not index_path.is_file():
        raise MissingArtifactError(index_path, "missing bank index")
    lines = [
        line
        for line in index_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not lines:
        raise IntegrityError("header", "empty bank index")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise IntegrityError("header", f"unreadable header: {err}") from err
    if header.get("format") != BANK_FORMAT or header.get("version") != BANK_VERSION:
        raise IntegrityError(
            "header",
            f"unsupported bank format {header.get('format')!r}"
            f" v{header.get('version')}",
        )
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise IntegrityError(
            "header", f"expected a {expected_kind}-term bank, found {kind!r}"
        )
    if int(header.get("count", -1)) != len(lines) - 1:
        raise IntegrityError(
            "header",
            f"header announces {header.get('count')} records, found {len(lines) - 1}",
        )

    if kind == "long":
        long_entries = []
        for position, line in enumerate(lines[1:]):
            record = _parse_record(line, position)
            record_id = record.get("id", position)
            try:
                feature = _unhex(record["feature"])
            except (KeyError, TypeError, ValueError) as err:
                raise IntegrityError(record_id, f"bad feature: {err}") from err
            long_entries.append(
                LongTermEntry(
                    feature=feature,
                    prompt=record["prompt"],
                    task_index=int(record["task"]),
                )
            )
        return LongTermBank(entries=long_entries)

    short_entries = []
    for position, line in enumerate(lines[1:]):
        record = _parse_record(line, position)
        record_id = record.get("id", position)
        path = directory / str(record.get("image", ""))
        if not path.is_file():
            raise IntegrityError(record_id, f"missing image {path.name}")
        if hashlib.sha256(path.read_bytes()).hexdigest() != record.get("sha256"):
            raise IntegrityError(record_id, "image checksum mismatch")
        try:
            score = float.fromhex(record["score"])
        except (KeyError, TypeError, ValueError) as err:
            raise IntegrityError(record_id, f"bad score: {err}") from err
        short_entries.append(
            ShortTermEntry(
                image=load_image(path, record_id),
                prompt=record["prompt"],
                task_index=int(record["task"]),
                score=score,
            )
        )
    return ShortTermBank(entries=short_entries)


def short_entry(
    image: torch.Tensor, prompt: str, task_index: int, score: float
) -> ShortTermEntry:
    return ShortTermEntry(
        image=quantize(image), prompt=prompt, task_index=task_index, score=score
    )
