"""Run directory layout.

    <run>/config.yaml            effective configuration
    <run>/base/                  pre-trained base checkpoint
    <run>/extractor/             frozen feature extractor
    <run>/task-<k>/checkpoint/   model after task k
    <run>/task-<k>/teacher/      snapshot taken before task k
    <run>/task-<k>/train_log.csv
    <run>/task-<k>/data/, prior/ task images and prior images
    <run>/task-<k>/done.json     completion marker with checksums
    <run>/banks/long-<k>/, short-<k>/
    <run>/eval/, <run>/report/
"""
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Union

from ..diffusion.checkpoint import MANIFEST_NAME
from ..errors import ConfigError, IntegrityError, MissingArtifactError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunLayout:
    root: Path

    @classmethod
    def at(cls, root: Union[str, Path]) -> "RunLayout":
        return cls(Path(root))

    @property
    def config(self) -> Path:
        return self.root / "config.yaml"

    @property
    def base(self) -> Path:
        return self.root / "base"

    @property
    def extractor(self) -> Path:
        return self.root / "extractor"

    @property
    def pretrain_log(self) -> Path:
        return self.base / "pretrain_log.csv"

    def task(self, k: int) -> Path:
        return self.root / f"task-{k}"

    def checkpoint(self, k: int) -> Path:
        return self.task(k) / "checkpoint"

    def teacher(self, k: int) -> Path:
        return self.task(k) / "teacher"

    def train_log(self, k: int) -> Path:
        return self.task(k) / "train_log.csv"

    def task_data(self, k: int) -> Path:
        return self.task(k) / "data"

    def prior(self, k: int) -> Path:
        return self.task(k) / "prior"

    def done(self, k: int) -> Path:
        return self.task(k) / "done.json"

    def long_bank(self, k: int) -> Path:
        return self.root / "banks" / f"long-{k}"

    def short_bank(self, k: int) -> Path:
        return self.root / "banks" / f"short-{k}"

    @property
    def eval(self) -> Path:
        return self.root / "eval"

    @property
    def report(self) -> Path:
        return self.root / "report"

    def require(self, path: Path) -> Path:
        if not path.exists():
            raise MissingArtifactError(path, "required artifact is missing")
        return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def adopt_shared(layout: RunLayout, source: RunLayout) -> None:
    """Copy the base checkpoint and extractor of another run into this one.

    Ablations trained against one pre-trained base share it this way. A copy
    already in place must match the source manifests.
    """
    if source.root.resolve() == layout.root.resolve():
        return
    for name in ("base", "extractor"):
        origin = source.require(getattr(source, name))
        target: Path = getattr(layout, name)
        if target.exists():
            if _digest(target / MANIFEST_NAME) != _digest(origin / MANIFEST_NAME):
                raise ConfigError(
                    "--base-run", f"{target} differs from {origin}; remove it first"
                )
            _LOGGER.debug("Shared %s already present in %s", name, layout.root)
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copytree(origin, target)
        _LOGGER.info("Copied %s from %s", name, source.root)


def _tracked(layout: RunLayout, k: int) -> Dict[str, Path]:
    return {
        "checkpoint": layout.checkpoint(k) / MANIFEST_NAME,
        "long_bank": layout.long_bank(k) / "index.jsonl",
        "prior": layout.prior(k) / "index.json",
        "data": layout.task_data(k) / "index.json",
    }


def mark_done(layout: RunLayout, k: int, extra: Dict[str, Any]) -> None:
    """Record task completion with checksums of the artifacts a resume reads."""
    checksums = {name: _digest(path) for name, path in _tracked(layout, k).items()}
    record = {"task": k, "sha256": checksums}
    record.update(extra)
    layout.done(k).write_text(
        json.dumps(record, indent=2, sort_keys=True), encoding="utf-8"
    )


def verify_done(layout: RunLayout, k: int) -> bool:
    """True when task k completed with intact artifacts; raise if they were altered."""
    marker = layout.done(k)
    if not marker.is_file():
        return False
    try:
        record = json.loads(marker.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise IntegrityError(marker, f"unreadable completion marker: {err}") from err
    for name, path in _tracked(layout, k).items():
        if not path.is_file():
            raise IntegrityError(
                f"task-{k}/{name}", "artifact missing after completion"
            )
        if _digest(path) != record["sha256"].get(name):
            raise IntegrityError(f"task-{k}/{name}", "checksum mismatch")
    return True
