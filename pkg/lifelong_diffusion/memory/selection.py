"""Short-term memory selection.

For every long-term entry the current model generates ``eta`` candidates from
the stored prompt. A candidate scores high when it is far from the candidates
generated for other tasks and close to the stored real feature; the best
candidate of each entry is kept.
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from ..config import BankConfig, SamplingConfig
from ..diffusion.model import DenoiserModel
from ..diffusion.sampler import sample
from ..diffusion.schedule import NoiseSchedule
from ..errors import DimensionError
from ..seeding import derive_seed
from .banks import FeatureEncoder, LongTermBank, ShortTermBank, normalize, short_entry

_LOGGER = logging.getLogger(__name__)


def score(
    candidate: torch.Tensor,
    stored: torch.Tensor,
    others: Mapping[int, torch.Tensor],
    beta_score: float,
) -> float:
    """Mean distance to other tasks' features plus weighted fidelity to the stored one.

    ``others`` maps task index to an (N, d) block of unit-norm features; all
    blocks are pooled into one mean. No other features means a zero first term.
    """
    if candidate.shape != stored.shape:
        raise DimensionError(
            f"candidate {tuple(candidate.shape)} vs stored {tuple(stored.shape)}"
        )
    blocks = [
        block.reshape(-1, candidate.shape[-1])
        for block in others.values()
        if block.numel() > 0
    ]
    for block in others.values():
        if block.numel() > 0 and block.shape[-1] != candidate.shape[-1]:
            raise DimensionError(
                f"other-task feature dim {block.shape[-1]} != {candidate.shape[-1]}"
            )
    diversity = 0.0
    if blocks:
        pooled = torch.cat(blocks, dim=0)
        diversity = float((1.0 - pooled @ candidate).mean())
    return diversity + beta_score * float(stored @ candidate)


def select_from_candidates(
    tasks: Sequence[int],
    stored_features: torch.Tensor,
    candidate_features: Sequence[torch.Tensor],
    beta_score: float,
) -> List[Tuple[int, float]]:
    """Winning candidate index and score for each entry; ties go to the lowest index.

    ``candidate_features[i]`` is the (eta, d) block generated for entry ``i``.
    """
    by_task: Dict[int, List[torch.Tensor]] = {}
    for task, block in zip(tasks, candidate_features):
        by_task.setdefault(task, []).append(block)
    pooled = {task: torch.cat(blocks, dim=0) for task, blocks in by_task.items()}

    winners = []
    for index, (task, block) in enumerate(zip(tasks, candidate_features)):
        others = {
            other: features for other, features in pooled.items() if other != task
        }
        best_index, best_score = 0, float("-inf")
        for candidate_index in range(block.shape[0]):
            value = score(
                block[candidate_index], stored_features[index], others, beta_score
            )
            if value > best_score:
                best_index, best_score = candidate_index, value
        winners.append((best_index, best_score))
    return winners


def generate_candidates(
    model: DenoiserModel,
    long_bank: LongTermBank,
    schedule: NoiseSchedule,
    eta: int,
    sampling: SamplingConfig,
    seed: int,
) -> List[torch.Tensor]:
    """``eta`` images per long-term entry, entry ``i`` seeded from ``candidates-i``."""
    candidates = []
    entries = tqdm(long_bank.entries, desc="candidates", leave=False, disable=None)
    for index, entry in enumerate(entries):
        images = sample(
            model,
            entry.prompt,
            schedule,
            steps=sampling.steps,
            guidance_scale=sampling.guidance_scale,
            seed=derive_seed(seed, f"candidates-{index}"),
            count=eta,
        )
        candidates.append(images)
    return candidates


def select_short_term(
    model: DenoiserModel,
    long_bank: LongTermBank,
    extractor: FeatureEncoder,
    schedule: NoiseSchedule,
    bank_config: BankConfig,
    sampling: SamplingConfig,
    seed: int,
    candidates: Optional[List[torch.Tensor]] = None,
) -> ShortTermBank:
    """Build a fresh short-term bank with one generated image per long-term entry."""
    if len(long_bank) == 0:
        return ShortTermBank()
    if candidates is None:
        candidates = generate_candidates(
            model, long_bank, schedule, bank_config.eta, sampling, seed
        )
    with torch.no_grad():
        candidate_features = [
            normalize(extractor.encode_images(images).to(torch.float64))
            for images in candidates
        ]
    stored = normalize(
        torch.stack(
            [
                torch.as_tensor(entry.feature, dtype=torch.float64)
                for entry in long_bank.entries
            ]
        )
    )
    tasks = [entry.task_index for entry in long_bank.entries]
    winners = select_from_candidates(
        tasks, stored, candidate_features, bank_config.beta_score
    )

    entries = [
        short_entry(candidates[i][winner], entry.prompt, entry.task_index, value)
        for i, (entry, (winner, value)) in enumerate(zip(long_bank.entries, winners))
    ]
    _LOGGER.info(
        "Short-term bank: %s entries over tasks %s", len(entries), sorted(set(tasks))
    )
    return ShortTermBank(entries=entries)
