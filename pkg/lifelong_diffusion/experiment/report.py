"""Report emission from stored evaluation CSVs.

Everything here reads CSV and PNG files written by ``evaluate`` and
``run-sequence``; nothing is recomputed from models.
"""
import logging
from pathlib import Path
from typing import List, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from PIL import Image  # noqa: E402

from ..errors import MissingArtifactError  # noqa: E402
from ..evaluation.metrics import AlignmentMatrix  # noqa: E402
from .layout import RunLayout  # noqa: E402

_LOGGER = logging.getLogger(__name__)

ABLATION_COLUMNS = ["method", "run", "k", "TFR_IA", "TFR_TA"]


def _read_csv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise MissingArtifactError(path, f"missing {path.name}")
    return pd.read_csv(path)


def _markdown_table(frame: pd.DataFrame) -> str:
    header = "| " + " | ".join(str(column) for column in frame.columns) + " |"
    rule = "| " + " | ".join("---" for _ in frame.columns) + " |"
    body = []
    for row in frame.itertuples(index=False):
        cells = [
            f"{value:.1f}" if isinstance(value, float) else str(value)
            for value in row
        ]
        body.append("| " + " | ".join(cells) + " |")
    return "\n".join([header, rule] + body)


def plot_alignment(matrix: AlignmentMatrix, path: Path) -> None:
    """IA and TA of every task after each later task."""
    figure, axes = plt.subplots(1, 2, figsize=(10, 4))
    k_max = matrix.size
    for task in range(1, k_max + 1):
        ks = list(range(task, k_max + 1))
        values = [matrix.get(k, task) for k in ks]
        axes[0].plot(ks, [ia for ia, _ in values], marker="o", label=f"task {task}")
        axes[1].plot(ks, [ta for _, ta in values], marker="o", label=f"task {task}")
    for axis, title in zip(axes, ("Image alignment", "Text alignment")):
        axis.set_title(title)
        axis.set_xlabel("after task k")
        axis.set_xticks(range(1, k_max + 1))
        axis.legend(fontsize="small")
    axes[0].set_ylabel("%")
    figure.tight_layout()
    figure.savefig(path, dpi=100)
    plt.close(figure)


def plot_forgetting(matrix: AlignmentMatrix, path: Path) -> None:
    """Drop in IA of each task relative to when it was learned."""
    figure, axis = plt.subplots(figsize=(5, 4))
    k_max = matrix.size
    for task in range(1, k_max + 1):
        learned, _ = matrix.get(task, task)
        ks = list(range(task, k_max + 1))
        drops = [learned - matrix.get(k, task)[0] for k in ks]
        axis.plot(ks, drops, marker="o", label=f"task {task}")
    axis.axhline(0.0, color="grey", linewidth=0.8)
    axis.set_xlabel("after task k")
    axis.set_ylabel("IA drop (%)")
    axis.set_xticks(range(1, k_max + 1))
    axis.legend(fontsize="small")
    figure.tight_layout()
    figure.savefig(path, dpi=100)
    plt.close(figure)


def plot_losses(logs: Sequence[Path], path: Path) -> None:
    figure, axis = plt.subplots(figsize=(6, 4))
    for log_path in logs:
        log = pd.read_csv(log_path)
        axis.plot(log["step"], log["total"], label=log_path.parent.name)
    axis.set_xlabel("step")
    axis.set_ylabel("total loss")
    axis.legend(fontsize="small")
    figure.tight_layout()
    figure.savefig(path, dpi=100)
    plt.close(figure)


def plot_samples(images: Sequence[Path], path: Path) -> None:
    figure, axes = plt.subplots(
        len(images), 1, figsize=(6, 1.5 * len(images)), squeeze=False
    )
    for axis, image_path in zip(axes[:, 0], images):
        with Image.open(image_path) as image:
            axis.imshow(np.asarray(image.convert("RGB")), interpolation="nearest")
        axis.set_title(image_path.stem, fontsize="small")
        axis.axis("off")
    figure.tight_layout()
    figure.savefig(path, dpi=100)
    plt.close(figure)


def collect_ablation(run_dir: Path) -> pd.DataFrame:
    """TFR rows of this run and every run directly below it, lowest TFR-IA first."""
    frames = []
    candidates: List[Path] = [run_dir / "eval" / "tfr.csv"]
    candidates += sorted(run_dir.glob("*/eval/tfr.csv"))
    for path in candidates:
        if path.is_file():
            frame = pd.read_csv(path)
            frame.insert(1, "run", path.parent.parent.name)
            frames.append(frame)
    if not frames:
        raise MissingArtifactError(
            run_dir / "eval" / "tfr.csv", "no forgetting-rate tables found"
        )
    table = pd.concat(frames, ignore_index=True)[ABLATION_COLUMNS]
    table = table.sort_values("TFR_IA", kind="mergesort", na_position="last")
    return table.reset_index(drop=True)


def cmd_report(run_dir: Union[str, Path]) -> Path:
    layout = RunLayout.at(run_dir)
    alignment_path = layout.eval / "alignment.csv"
    matrix = AlignmentMatrix.from_frame(_read_csv(alignment_path))
    tfr = _read_csv(layout.eval / "tfr.csv")
    per_concept = _read_csv(layout.eval / "per_concept.csv")
    multi_path = layout.eval / "multi_concept.csv"
    multi = pd.read_csv(multi_path) if multi_path.is_file() else None

    report = layout.report
    report.mkdir(parents=True, exist_ok=True)
    ablation = collect_ablation(layout.root)
    ablation.round(1).to_csv(report / "ablation.csv", index=False)
    tfr.round(1).to_csv(report / "tfr_table.csv", index=False)
    matrix.to_frame().round(1).to_csv(report / "alignment_table.csv", index=False)

    plot_alignment(matrix, report / "ia_ta.png")
    plot_forgetting(matrix, report / "forgetting.png")
    logs = sorted(
        layout.root.glob("task-*/train_log.csv"),
        key=lambda path: int(path.parent.name.split("-")[1]),
    )
    if logs:
        plot_losses(logs, report / "loss_curves.png")
    samples = sorted((layout.eval / "samples").glob("*.png"))
    if samples:
        plot_samples(samples, report / "samples.png")

    sections = [
        f"# Run report: {layout.root.name}",
        "",
        "## Forgetting rates",
        "",
        _markdown_table(tfr),
        "",
        "## Final model per concept",
        "",
        _markdown_table(per_concept),
        "",
        "## Alignment matrix",
        "",
        _markdown_table(matrix.to_frame()),
        "",
        "## Methods by TFR-IA",
        "",
        _markdown_table(ablation),
    ]
    if multi is not None and len(multi):
        sections += ["", "## Multi-concept prompts", "", _markdown_table(multi)]
    (report / "summary.md").write_text("\n".join(sections) + "\n", encoding="utf-8")
    _LOGGER.info("Report written to %s", report)
    return report
