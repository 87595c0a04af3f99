"""Evaluation of a learned task sequence."""
import logging
from typing import Dict, List, Mapping, Sequence

import pandas as pd
import torch
from tqdm import tqdm

from ..config import EvaluationConfig, GuidanceConfig, SamplingConfig
from ..data.concepts import ConceptSpec
from ..data.templates import PromptTemplate
from ..diffusion.model import DenoiserModel
from ..diffusion.sampler import sample
from ..diffusion.schedule import NoiseSchedule
from ..errors import MissingArtifactError
from ..guidance.sampler import guided_sample
from ..seeding import derive_seed
from .extractor import FeatureExtractor
from .metrics import AlignmentMatrix, image_alignment, text_alignment

_LOGGER = logging.getLogger(__name__)


def concept_prompts(
    concept: ConceptSpec, templates: Sequence[PromptTemplate], count: int
) -> List[str]:
    return [template.fill(concept.phrase) for template in templates[:count]]


def multi_concept_prompt(first: ConceptSpec, second: ConceptSpec) -> str:
    return f"a photo of {first.phrase} and {second.phrase}"


def measure_concept(
    model: DenoiserModel,
    concept: ConceptSpec,
    reference: torch.Tensor,
    prompts: Sequence[str],
    extractor: FeatureExtractor,
    schedule: NoiseSchedule,
    sampling: SamplingConfig,
    samples_per_prompt: int,
    seed: int,
) -> Dict[str, float]:
    """IA over every image generated for the concept; TA averaged over prompts."""
    generated = []
    text_scores = []
    for index, prompt in enumerate(prompts):
        images = sample(
            model,
            prompt,
            schedule,
            steps=sampling.steps,
            guidance_scale=sampling.guidance_scale,
            seed=derive_seed(seed, f"{concept.concept_id}-prompt-{index}"),
            count=samples_per_prompt,
        )
        generated.append(images)
        text_scores.append(text_alignment(images, prompt, extractor))
    ia = image_alignment(torch.cat(generated), reference, extractor)
    return {"IA": ia, "TA": sum(text_scores) / len(text_scores)}


def evaluate_sequence(
    models: Mapping[int, DenoiserModel],
    concepts: Sequence[ConceptSpec],
    references: Mapping[int, torch.Tensor],
    templates: Sequence[PromptTemplate],
    extractor: FeatureExtractor,
    schedule: NoiseSchedule,
    sampling: SamplingConfig,
    evaluation: EvaluationConfig,
    seed: int,
) -> AlignmentMatrix:
    """Fill the alignment matrix for every ``l <= k`` over the available task models."""
    matrix = AlignmentMatrix()
    for k in range(1, len(concepts) + 1):
        if k not in models:
            raise MissingArtifactError(f"task-{k}", f"no checkpoint for task {k}")
        model = models[k]
        tasks = range(1, k + 1)
        desc = f"evaluate after task {k}"
        for task in tqdm(tasks, desc=desc, leave=False, disable=None):
            concept = concepts[task - 1]
            prompts = concept_prompts(
                concept, templates, evaluation.prompts_per_concept
            )
            scores = measure_concept(
                model,
                concept,
                references[task],
                prompts,
                extractor,
                schedule,
                sampling,
                evaluation.samples_per_prompt,
                derive_seed(seed, f"eval-{k}-{task}"),
            )
            matrix.set(k, task, scores["IA"], scores["TA"])
            _LOGGER.info(
                "After task %s, task %s: IA %.1f TA %.1f",
                k,
                task,
                scores["IA"],
                scores["TA"],
            )
    return matrix


def per_concept_table(
    matrix: AlignmentMatrix, concepts: Sequence[ConceptSpec]
) -> pd.DataFrame:
    """Final-model IA/TA per learned concept plus the average."""
    k = matrix.size
    rows = []
    for task in range(1, k + 1):
        ia, ta = matrix.get(k, task)
        rows.append({"concept": concepts[task - 1].concept_id, "IA": ia, "TA": ta})
    frame = pd.DataFrame(rows, columns=["concept", "IA", "TA"])
    average = {"concept": "average", "IA": frame["IA"].mean(), "TA": frame["TA"].mean()}
    return pd.concat([frame, pd.DataFrame([average])], ignore_index=True)


def evaluate_multi_concept(
    model: DenoiserModel,
    concepts: Sequence[ConceptSpec],
    references: Mapping[int, torch.Tensor],
    extractor: FeatureExtractor,
    schedule: NoiseSchedule,
    sampling: SamplingConfig,
    guidance: GuidanceConfig,
    evaluation: EvaluationConfig,
    seed: int,
) -> pd.DataFrame:
    """Guided two-concept prompts over consecutive concept pairs."""
    rows = []
    pairs = list(zip(range(1, len(concepts)), range(2, len(concepts) + 1)))
    pairs = pairs[: evaluation.multi_concept_prompts]
    for first, second in pairs:
        prompt = multi_concept_prompt(concepts[first - 1], concepts[second - 1])
        images, report = guided_sample(
            model,
            prompt,
            schedule,
            guidance,
            steps=sampling.steps,
            guidance_scale=sampling.guidance_scale,
            seed=derive_seed(seed, f"multi-{first}-{second}"),
            count=evaluation.samples_per_prompt,
        )
        ia = (
            image_alignment(images, references[first], extractor)
            + image_alignment(images, references[second], extractor)
        ) / 2.0
        ta = text_alignment(images, prompt, extractor)
        rows.append({"prompt": prompt, "IA": ia, "TA": ta, "neglect": report.neglect})
        _LOGGER.info("Multi-concept %r: IA %.1f TA %.1f", prompt, ia, ta)
    return pd.DataFrame(rows, columns=["prompt", "IA", "TA", "neglect"])
