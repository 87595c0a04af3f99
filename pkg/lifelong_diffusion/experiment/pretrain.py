"""Base-model pre-training on generic renders of every shape family."""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import pandas as pd
import torch
from tqdm import tqdm

from ..config import ExperimentConfig
from ..data.datasets import build_pretrain_corpus
from ..diffusion.loss import DenoisingBatch, ldm_loss, noised_inputs
from ..diffusion.model import DenoiserModel
from ..diffusion.schedule import NoiseSchedule
from ..diffusion.text import Vocabulary, tokenize
from ..errors import TrainingFailureError
from ..seeding import derive_seed, make_generator

_LOGGER = logging.getLogger(__name__)


@dataclass
class PretrainResult:
    model: DenoiserModel
    history: pd.DataFrame
    initial_heldout: float
    best_heldout: float


def build_model(config: ExperimentConfig, seed: int) -> DenoiserModel:
    """Fresh model whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "model-init"))
        vocabulary = Vocabulary(config.model.personalized_slots)
        return DenoiserModel(config.model, vocabulary, config.schedule.steps)


def corpus_batch(
    pairs: List[Tuple[torch.Tensor, str]], vocabulary: Vocabulary, max_tokens: int
) -> DenoisingBatch:
    images = torch.stack([image for image, _ in pairs])
    tokens = [tokenize(prompt, vocabulary, max_tokens) for _, prompt in pairs]
    return DenoisingBatch.from_tokens(images, tokens, max_tokens)


def pretrain_base(
    config: ExperimentConfig, schedule: NoiseSchedule, seed: int
) -> PretrainResult:
    """Train every weight until the held-out denoising loss stops improving.

    The held-out loss uses one fixed draw of timesteps and noise so windows
    are comparable. Training stops after ``patience`` windows without a
    relative improvement of ``plateau_tolerance``; it fails if by then the
    loss never dropped below its starting value.
    """
    settings = config.pretrain
    max_tokens = config.model.max_tokens
    model = build_model(config, seed)
    corpus = build_pretrain_corpus(
        settings.images_per_family,
        derive_seed(seed, "pretrain-corpus"),
        config.model.resolution,
    )
    heldout = min(settings.heldout_images, len(corpus) // 5)
    vocabulary = model.vocabulary
    split = len(corpus) - heldout
    train_batch = corpus_batch(corpus[:split], vocabulary, max_tokens)
    heldout_batch = corpus_batch(corpus[split:], vocabulary, max_tokens)
    heldout_generator = make_generator(derive_seed(seed, "pretrain-heldout"))
    _, fixed_t, fixed_eps = noised_inputs(heldout_batch, schedule, heldout_generator)
    unconditional = model.unconditional_ids(1)[0]

    def heldout_loss() -> float:
        model.eval()
        with torch.no_grad():
            value = float(
                ldm_loss(
                    model, heldout_batch, schedule, timesteps=fixed_t, noise=fixed_eps
                )
            )
        model.train()
        return value

    optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
    generator = make_generator(derive_seed(seed, "pretrain-steps"))
    initial = heldout_loss()
    best = initial
    stale = 0
    rows = [{"step": 0, "train_loss": float("nan"), "heldout_loss": initial}]
    _LOGGER.info(
        "Pre-training on %s images, initial held-out loss %.4f",
        len(train_batch),
        initial,
    )

    model.train()
    steps = range(1, settings.max_steps + 1)
    progress = tqdm(steps, desc="pretrain", leave=False, disable=None)
    for step in progress:
        index = torch.randperm(len(train_batch), generator=generator)
        index = index[: settings.batch_size]
        batch = train_batch.subset(index)
        dropped = torch.rand(len(batch), generator=generator) < settings.cond_dropout
        token_ids = torch.where(
            dropped.unsqueeze(1),
            unconditional.expand_as(batch.token_ids),
            batch.token_ids,
        )
        batch = DenoisingBatch(latents=batch.latents, token_ids=token_ids)

        optimizer.zero_grad()
        loss = ldm_loss(model, batch, schedule, generator)
        loss.backward()
        optimizer.step()
        progress.set_postfix(loss=float(loss))

        if step % settings.eval_every == 0:
            value = heldout_loss()
            rows.append(
                {"step": step, "train_loss": float(loss), "heldout_loss": value}
            )
            _LOGGER.debug(
                "Pre-train step %s: train %.4f held-out %.4f",
                step,
                float(loss),
                value,
            )
            if value < best * (1.0 - settings.plateau_tolerance):
                best = value
                stale = 0
            else:
                stale += 1
            if stale >= settings.patience:
                if best >= initial:
                    raise TrainingFailureError(
                        "held-out loss never fell below its initial value"
                        f" {initial:.4f} over {settings.patience} windows"
                    )
                _LOGGER.info(
                    "Held-out loss plateaued at step %s (best %.4f)", step, best
                )
                break

    model.eval()
    history = pd.DataFrame(rows, columns=["step", "train_loss", "heldout_loss"])
    return PretrainResult(
        model=model, history=history, initial_heldout=initial, best_heldout=best
    )
