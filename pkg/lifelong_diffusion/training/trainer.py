"""Sequential training of one personalized concept per task."""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd
import torch
from tqdm import tqdm

from ..config import ExperimentConfig
from ..data.datasets import (
    PriorDataset,
    TaskDataset,
    build_prior_dataset,
    class_prompt_for,
    subsample_prior,
)
from ..diffusion.loss import DenoisingBatch
from ..diffusion.model import DenoiserModel, count_parameters, snapshot
from ..diffusion.schedule import NoiseSchedule
from ..errors import SequencingError, TrainingFailureError
from ..memory.banks import FeatureEncoder, LongTermBank, ShortTermBank, update_long_term
from ..memory.selection import select_short_term
from ..seeding import derive_seed, make_generator
from .objectives import StepInputs, select_objective

_LOGGER = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "task_loss", "tame_loss", "ecd_loss", "total"]


@dataclass
class LifelongState:
    """What carries over between tasks."""

    model: DenoiserModel
    base: DenoiserModel
    long_bank: LongTermBank = field(default_factory=LongTermBank)
    priors: Dict[int, PriorDataset] = field(default_factory=dict)
    completed: int = 0


@dataclass
class TaskResult:
    task_index: int
    model: DenoiserModel
    teacher: DenoiserModel
    long_bank: LongTermBank
    short_bank: ShortTermBank
    prior: PriorDataset
    log: pd.DataFrame
    trainable_parameters: int


def _minibatch(
    batch: DenoisingBatch, size: int, generator: torch.Generator
) -> DenoisingBatch:
    if len(batch) <= size:
        return batch
    return batch.subset(torch.randperm(len(batch), generator=generator)[:size])


def generate_prior(
    base: DenoiserModel,
    schedule: NoiseSchedule,
    dataset: TaskDataset,
    config: ExperimentConfig,
    seed: int,
) -> PriorDataset:
    """Class images from the frozen base model, subsampled to the configured size."""
    prior = build_prior_dataset(
        base,
        schedule,
        class_prompt_for(dataset.concept),
        config.prior.num_images,
        derive_seed(seed, f"prior-{dataset.task_index}"),
        config.sampling.steps,
        config.sampling.guidance_scale,
        config.sampling.batch_size,
        task_index=dataset.task_index,
    )
    subsample_seed = derive_seed(seed, f"prior-subsample-{dataset.task_index}")
    return subsample_prior(prior, config.prior.subsample, subsample_seed)


def train_task(
    state: LifelongState,
    dataset: TaskDataset,
    config: ExperimentConfig,
    schedule: NoiseSchedule,
    extractor: FeatureEncoder,
    seed: Optional[int] = None,
    prior: Optional[PriorDataset] = None,
) -> TaskResult:
    """Learn task ``k = dataset.task_index`` and advance ``state``.

    Order: snapshot the teacher, select the short-term bank with it, generate
    the prior set, optimize, then add the task to the long-term bank.
    """
    k = dataset.task_index
    if k != state.completed + 1:
        raise SequencingError(f"task {k} cannot follow task {state.completed}")
    seed = config.seed if seed is None else seed
    max_tokens = config.model.max_tokens
    _LOGGER.info(
        "Task %s: learning %s (%s images)", k, dataset.concept.phrase, len(dataset)
    )

    teacher = snapshot(state.model)
    short_bank = select_short_term(
        teacher,
        state.long_bank,
        extractor,
        schedule,
        config.bank,
        config.sampling,
        derive_seed(seed, f"short-bank-{k}"),
    )
    if prior is None:
        prior = generate_prior(state.base, schedule, dataset, config, seed)
    priors = dict(state.priors)
    priors[k] = prior

    model = state.model
    model.register_concept(dataset.concept.token, dataset.concept.class_noun)
    trainable = model.freeze_for_personalization()
    trainable_count = count_parameters(iter(trainable))
    _LOGGER.info("Task %s: %s trainable parameters", k, trainable_count)

    objective = select_objective(k, config.train, config.weights, schedule)
    _LOGGER.info("Task %s: objective %s", k, objective.get_name())
    vocabulary = model.vocabulary
    task_batch = dataset.as_batch(vocabulary, max_tokens)
    prior_batches = {
        task: data.as_batch(vocabulary, max_tokens)
        for task, data in sorted(priors.items())
    }
    short_batches = short_bank.batches(vocabulary, max_tokens)

    optimizer = torch.optim.Adam(trainable, lr=config.train.learning_rate)
    generator = make_generator(derive_seed(seed, f"train-{k}"))
    batch_size = config.train.batch_size
    rows = []
    model.train()
    steps = range(1, config.train.steps + 1)
    for step in tqdm(steps, desc=f"task {k}", leave=False, disable=None):
        inputs = StepInputs(
            task_index=k,
            task_batch=_minibatch(task_batch, batch_size, generator),
            prior_batches={
                task: _minibatch(batch, batch_size, generator)
                for task, batch in prior_batches.items()
            },
            short_batches={
                task: _minibatch(batch, batch_size, generator)
                for task, batch in short_batches.items()
            },
        )
        optimizer.zero_grad()
        step_teacher = teacher if objective.uses_teacher else None
        terms = objective.compute(model, step_teacher, inputs, generator)
        total = terms.total
        if not math.isfinite(float(total)):
            raise TrainingFailureError(
                f"task {k}: loss became {float(total)} at step {step}"
            )
        total.backward()
        optimizer.step()
        rows.append(terms.as_row(step))
        _LOGGER.debug("Task %s step %s: %s", k, step, rows[-1])
    model.eval()
    model.version = k

    long_bank = update_long_term(
        state.long_bank, k, dataset.images, dataset.prompts, extractor
    )
    state.model = model
    state.long_bank = long_bank
    state.priors = priors
    state.completed = k
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    final = float(log["total"].iloc[-1]) if len(log) else float("nan")
    _LOGGER.info("Task %s: done, final loss %.4f", k, final)
    return TaskResult(
        task_index=k,
        model=model,
        teacher=teacher,
        long_bank=long_bank,
        short_bank=short_bank,
        prior=prior,
        log=log,
        trainable_parameters=trainable_count,
    )


def save_training_log(log: pd.DataFrame, path: Union[str, Path]) -> None:
    log.to_csv(path, index=False, float_format="%.8g")


def load_training_log(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)
