"""Implementation of the command-line subcommands."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
import torch

from ..config import ExperimentConfig, save_config
from ..data.concepts import ConceptSpec
from ..data.datasets import (
    TaskDataset,
    build_pretrain_corpus,
    load_prior_dataset,
    load_task_dataset,
    save_prior_dataset,
    save_task_dataset,
)
from ..data.templates import load_templates
from ..diffusion.checkpoint import load_checkpoint, save_checkpoint
from ..diffusion.model import DenoiserModel, snapshot
from ..diffusion.sampler import sample
from ..diffusion.schedule import NoiseSchedule, build_schedule
from ..evaluation.extractor import fit_extractor, load_extractor, save_extractor
from ..evaluation.harness import (
    concept_prompts,
    evaluate_multi_concept,
    evaluate_sequence,
    per_concept_table,
)
from ..evaluation.metrics import tfr_frame
from ..guidance.sampler import guided_sample
from ..imaging import save_image
from ..memory.banks import load_bank, save_bank
from ..seeding import derive_seed
from ..training.trainer import LifelongState, save_training_log, train_task
from .layout import RunLayout, adopt_shared, mark_done, verify_done
from .pretrain import pretrain_base

_LOGGER = logging.getLogger(__name__)


def cmd_pretrain(config: ExperimentConfig) -> Path:
    """Train the base model and fit the frozen feature extractor."""
    layout = RunLayout.at(config.run_dir)
    layout.root.mkdir(parents=True, exist_ok=True)
    save_config(config, layout.config)
    schedule = build_schedule(
        config.schedule.steps, config.schedule.beta_start, config.schedule.beta_end
    )

    result = pretrain_base(config, schedule, config.seed)
    save_checkpoint(result.model, layout.base, config.schedule, "base")
    result.history.to_csv(layout.pretrain_log, index=False, float_format="%.8g")
    _LOGGER.info(
        "Base model: held-out loss %.4f -> %.4f",
        result.initial_heldout,
        result.best_heldout,
    )

    corpus = build_pretrain_corpus(
        config.extractor.images_per_family,
        derive_seed(config.seed, "extractor-corpus"),
        config.model.resolution,
    )
    extractor = fit_extractor(
        corpus, config.extractor, config.seed, config.model.channels
    )
    save_extractor(extractor, layout.extractor)
    return layout.base


def _completed_tasks(layout: RunLayout, total: int) -> int:
    completed = 0
    for k in range(1, total + 1):
        if not verify_done(layout, k):
            break
        completed = k
    return completed


def task_dataset(config: ExperimentConfig, k: int) -> TaskDataset:
    concept = config.concepts[k - 1]
    return TaskDataset.from_concept(
        k,
        concept,
        config.prior.shots,
        derive_seed(config.seed, f"task-data-{k}"),
        config.model.resolution,
    )


def cmd_run_sequence(
    config: ExperimentConfig,
    resume: bool = False,
    base_run: Optional[Union[str, Path]] = None,
) -> List[Path]:
    """Learn every configured concept in order.

    With ``resume``, tasks whose completion marker verifies are skipped. With
    ``base_run``, the base checkpoint and extractor of that run are copied in
    first.
    """
    layout = RunLayout.at(config.run_dir)
    if base_run is not None:
        adopt_shared(layout, RunLayout.at(base_run))
    base = load_checkpoint(layout.require(layout.base))
    extractor = load_extractor(layout.require(layout.extractor))
    save_config(config, layout.config)
    if base.schedule_config != config.schedule:
        _LOGGER.warning(
            "Base checkpoint schedule %s differs from the configured one;"
            " using the checkpoint's",
            base.schedule_config,
        )
    schedule = base.schedule

    state = LifelongState(model=base.model, base=snapshot(base.model))
    total = len(config.concepts)
    if resume:
        completed = _completed_tasks(layout, total)
        if completed:
            state.model = load_checkpoint(layout.checkpoint(completed)).model
            state.long_bank = load_bank(
                layout.long_bank(completed), expected_kind="long"
            )
            state.priors = {
                task: load_prior_dataset(layout.prior(task))
                for task in range(1, completed + 1)
            }
            state.completed = completed
            _LOGGER.info("Resuming after task %s of %s", completed, total)

    checkpoints = [layout.checkpoint(k) for k in range(1, state.completed + 1)]
    for k in range(state.completed + 1, total + 1):
        dataset = task_dataset(config, k)
        result = train_task(
            state, dataset, config, schedule, extractor, seed=config.seed
        )

        layout.task(k).mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            result.model, layout.checkpoint(k), base.schedule_config, f"task-{k}"
        )
        save_checkpoint(
            result.teacher, layout.teacher(k), base.schedule_config, f"teacher-{k}"
        )
        save_training_log(result.log, layout.train_log(k))
        save_task_dataset(dataset, layout.task_data(k))
        save_prior_dataset(result.prior, layout.prior(k))
        save_bank(result.long_bank, layout.long_bank(k))
        save_bank(result.short_bank, layout.short_bank(k))
        mark_done(
            layout,
            k,
            {
                "concept": dataset.concept.concept_id,
                "method": config.method,
                "trainable_parameters": result.trainable_parameters,
            },
        )
        checkpoints.append(layout.checkpoint(k))
    _LOGGER.info("Sequence complete (%s tasks, method %s)", total, config.method)
    return checkpoints


def cmd_generate(
    checkpoint: Union[str, Path],
    prompt: str,
    config: ExperimentConfig,
    out_dir: Union[str, Path],
    count: int = 1,
    seed: Optional[int] = None,
    use_caa: Optional[bool] = None,
    use_oaa: Optional[bool] = None,
) -> List[Path]:
    """Write ``sample-NNN.png`` and its guidance report for each requested image."""
    loaded = load_checkpoint(checkpoint)
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for index in range(count):
        image, report = guided_sample(
            loaded.model,
            prompt,
            loaded.schedule,
            config.guidance,
            steps=config.sampling.steps,
            guidance_scale=config.sampling.guidance_scale,
            seed=derive_seed(seed, f"generate-{index}"),
            count=1,
            use_caa=use_caa,
            use_oaa=use_oaa,
        )
        path = out_dir / f"sample-{index:03d}.png"
        save_image(image[0], path)
        report.to_csv(out_dir / f"sample-{index:03d}_guidance.csv")
        _LOGGER.info("Wrote %s (neglect %s)", path, report.neglect)
        paths.append(path)
    return paths


def _sample_strip(
    model: DenoiserModel,
    concept: ConceptSpec,
    config: ExperimentConfig,
    schedule: NoiseSchedule,
    seed: int,
) -> torch.Tensor:
    prompt = concept_prompts(concept, load_templates(), 1)[0]
    images = sample(
        model,
        prompt,
        schedule,
        steps=config.sampling.steps,
        guidance_scale=config.sampling.guidance_scale,
        seed=seed,
        count=config.evaluation.samples_per_prompt,
    )
    return torch.cat(list(images), dim=-1)


def cmd_evaluate(config: ExperimentConfig) -> Path:
    """Alignment matrix, forgetting rates, per-concept and multi-concept tables."""
    layout = RunLayout.at(config.run_dir)
    extractor = load_extractor(layout.require(layout.extractor))
    total = len(config.concepts)
    tasks = range(1, total + 1)
    loaded = {k: load_checkpoint(layout.checkpoint(k)) for k in tasks}
    models: Dict[int, DenoiserModel] = {
        k: checkpoint.model for k, checkpoint in loaded.items()
    }
    schedule = loaded[total].schedule
    references = {k: load_task_dataset(layout.task_data(k)).images for k in tasks}

    layout.eval.mkdir(parents=True, exist_ok=True)
    matrix = evaluate_sequence(
        models,
        config.concepts,
        references,
        load_templates(),
        extractor,
        schedule,
        config.sampling,
        config.evaluation,
        derive_seed(config.seed, "evaluate"),
    )
    matrix.save_csv(layout.eval / "alignment.csv")
    if total >= 2:
        tfr_frame(matrix, config.method).to_csv(
            layout.eval / "tfr.csv", index=False, float_format="%.6f"
        )
    else:
        _LOGGER.warning("A single task has no forgetting rate")
        undefined = {"TFR_IA": float("nan"), "TFR_TA": float("nan")}
        pd.DataFrame([{"method": config.method, "k": 1, **undefined}]).to_csv(
            layout.eval / "tfr.csv", index=False
        )
    per_concept_table(matrix, config.concepts).to_csv(
        layout.eval / "per_concept.csv", index=False, float_format="%.6f"
    )

    final = models[total]
    multi = evaluate_multi_concept(
        final,
        config.concepts,
        references,
        extractor,
        schedule,
        config.sampling,
        config.guidance,
        config.evaluation,
        derive_seed(config.seed, "evaluate-multi"),
    )
    multi.to_csv(layout.eval / "multi_concept.csv", index=False, float_format="%.6f")

    samples = layout.eval / "samples"
    samples.mkdir(exist_ok=True)
    for k, concept in enumerate(config.concepts, start=1):
        strip = _sample_strip(
            final, concept, config, schedule, derive_seed(config.seed, f"samples-{k}")
        )
        save_image(strip, samples / f"{k:02d}-{concept.concept_id}.png")
    _LOGGER.info("Evaluation written to %s", layout.eval)
    return layout.eval
