"""Image alignment, text alignment and task forgetting rates.

Alignments are cosine similarities in the extractor's feature space, times
100. ``AlignmentMatrix`` holds the alignment of task ``l`` measured after
learning task ``k`` for every ``l <= k``.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import pandas as pd
import torch
import torch.nn.functional as F

from ..errors import (
    EmptyInputError,
    IncompleteMatrixError,
    MissingArtifactError,
    RangeError,
    UndefinedMetricError,
)

_LOGGER = logging.getLogger(__name__)

MATRIX_COLUMNS = ["k", "l", "IA", "TA"]


def image_alignment_features(generated: torch.Tensor, reference: torch.Tensor) -> float:
    """Mean cosine over every generated x reference pair, times 100."""
    if generated.shape[0] == 0 or reference.shape[0] == 0:
        raise EmptyInputError(
            "image alignment needs non-empty generated and reference sets"
        )
    generated = F.normalize(generated.to(torch.float64), dim=-1)
    reference = F.normalize(reference.to(torch.float64), dim=-1)
    return float((generated @ reference.T).mean()) * 100.0


def text_alignment_features(generated: torch.Tensor, text: torch.Tensor) -> float:
    """Mean cosine between each image feature and the text feature, times 100."""
    if generated.shape[0] == 0:
        raise EmptyInputError("text alignment needs at least one generated image")
    generated = F.normalize(generated.to(torch.float64), dim=-1)
    text = F.normalize(text.to(torch.float64).reshape(-1), dim=-1)
    return float((generated @ text).mean()) * 100.0


@torch.no_grad()
def image_alignment(
    generated: torch.Tensor, reference: torch.Tensor, extractor
) -> float:
    if generated.shape[0] == 0 or reference.shape[0] == 0:
        raise EmptyInputError(
            "image alignment needs non-empty generated and reference sets"
        )
    return image_alignment_features(
        extractor.encode_images(generated), extractor.encode_images(reference)
    )


@torch.no_grad()
def text_alignment(generated: torch.Tensor, prompt: str, extractor) -> float:
    if generated.shape[0] == 0:
        raise EmptyInputError("text alignment needs at least one generated image")
    return text_alignment_features(
        extractor.encode_images(generated), extractor.encode_text(prompt)
    )


@dataclass
class AlignmentMatrix:
    entries: Dict[Tuple[int, int], Tuple[float, float]] = field(default_factory=dict)

    def set(self, k: int, task: int, ia: float, ta: float) -> None:
        if not 1 <= task <= k:
            raise RangeError(f"entry ({k}, {task}) is outside the lower triangle")
        self.entries[(k, task)] = (float(ia), float(ta))

    def get(self, k: int, task: int) -> Tuple[float, float]:
        try:
            return self.entries[(k, task)]
        except KeyError:
            raise IncompleteMatrixError(
                f"missing alignment entry (k={k}, l={task})"
            ) from None

    @property
    def size(self) -> int:
        return max((k for k, _ in self.entries), default=0)

    def row(self, k: int) -> List[Tuple[float, float]]:
        return [self.get(k, task) for task in range(1, k + 1)]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (k, task, ia, ta) for (k, task), (ia, ta) in sorted(self.entries.items())
        ]
        return pd.DataFrame(rows, columns=MATRIX_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "AlignmentMatrix":
        matrix = cls()
        for record in frame.itertuples(index=False):
            matrix.set(int(record.k), int(record.l), float(record.IA), float(record.TA))
        return matrix

    def save_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.6f")

    @classmethod
    def load_csv(cls, path: Union[str, Path]) -> "AlignmentMatrix":
        if not Path(path).is_file():
            raise MissingArtifactError(path, "missing alignment matrix")
        return cls.from_frame(pd.read_csv(path))


def tfr(matrix: AlignmentMatrix, k: int) -> Tuple[float, float]:
    """Mean drop of each earlier task's IA and TA from when it was learned to ``k``."""
    if k < 2:
        raise UndefinedMetricError("forgetting rate needs at least two learned tasks")
    drop_ia = 0.0
    drop_ta = 0.0
    for task in range(1, k):
        learned_ia, learned_ta = matrix.get(task, task)
        final_ia, final_ta = matrix.get(k, task)
        drop_ia += learned_ia - final_ia
        drop_ta += learned_ta - final_ta
    return drop_ia / (k - 1), drop_ta / (k - 1)


def tfr_frame(matrix: AlignmentMatrix, method: str = "") -> pd.DataFrame:
    k = matrix.size
    tfr_ia, tfr_ta = tfr(matrix, k)
    row = {"method": method, "k": k, "TFR_IA": tfr_ia, "TFR_TA": tfr_ta}
    return pd.DataFrame([row])


def percent(value: float) -> str:
    return f"{value:.1f}"
