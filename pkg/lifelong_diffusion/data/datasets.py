"""Task datasets, prior-preservation sets and the pretraining corpus."""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from ..diffusion.loss import DenoisingBatch
from ..diffusion.model import DenoiserModel
from ..diffusion.sampler import sample_many
from ..diffusion.schedule import NoiseSchedule
from ..diffusion.text import COLOR_WORDS, CONCEPT_NOUNS, Vocabulary, tokenize
from ..errors import MissingArtifactError, RangeError, SnapshotError
from ..imaging import from_uint8, load_image, quantize, save_image
from ..seeding import derive_seed, make_generator
from .concepts import ConceptSpec, generate_concept_images, render_generic
from .templates import PromptTemplate, load_templates

_LOGGER = logging.getLogger(__name__)

INDEX_NAME = "index.json"


@dataclass(frozen=True)
class TaskSample:
    image: torch.Tensor
    prompt: str
    concept_id: str
    seed: int


@dataclass
class TaskDataset:
    task_index: int
    concept: ConceptSpec
    samples: List[TaskSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def images(self) -> torch.Tensor:
        return torch.stack([sample.image for sample in self.samples])

    @property
    def prompts(self) -> List[str]:
        return [sample.prompt for sample in self.samples]

    def as_batch(self, vocabulary: Vocabulary, max_tokens: int) -> DenoisingBatch:
        tokens = [tokenize(prompt, vocabulary, max_tokens) for prompt in self.prompts]
        return DenoisingBatch.from_tokens(self.images, tokens, max_tokens)

    @classmethod
    def from_concept(
        cls,
        task_index: int,
        concept: ConceptSpec,
        count: int,
        seed: int,
        resolution: int,
        template: Optional[PromptTemplate] = None,
    ) -> "TaskDataset":
        template = template or load_templates()[0]
        prompt = template.fill(concept.phrase)
        arrays = generate_concept_images(concept, count, seed, resolution)
        samples = [
            TaskSample(
                image=from_uint8(array),
                prompt=prompt,
                concept_id=concept.concept_id,
                seed=seed,
            )
            for array in arrays
        ]
        return cls(task_index=task_index, concept=concept, samples=samples)


@dataclass
class PriorDataset:
    """Images generated by a frozen model for one class prompt."""

    class_prompt: str
    images: torch.Tensor
    task_index: int = 0

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def as_batch(self, vocabulary: Vocabulary, max_tokens: int) -> DenoisingBatch:
        tokens = tokenize(self.class_prompt, vocabulary, max_tokens)
        return DenoisingBatch.from_tokens(self.images, [tokens] * len(self), max_tokens)


def class_prompt_for(
    concept: ConceptSpec, template: Optional[PromptTemplate] = None
) -> str:
    template = template or load_templates()[0]
    return template.fill(concept.class_noun)


def build_prior_dataset(
    frozen_model: DenoiserModel,
    schedule: NoiseSchedule,
    class_prompt: str,
    num_images: int,
    seed: int,
    steps: int,
    guidance_scale: float,
    batch_size: int,
    task_index: int = 0,
) -> PriorDataset:
    if num_images <= 0:
        raise RangeError(f"prior set needs a positive size, got {num_images}")
    if not getattr(frozen_model, "frozen", False):
        raise SnapshotError("prior images must come from a frozen snapshot")
    batches = (num_images + batch_size - 1) // batch_size
    seeds = [derive_seed(seed, f"prior-batch-{i}") for i in range(batches)]
    images = sample_many(
        frozen_model,
        class_prompt,
        schedule,
        num_images,
        batch_size,
        steps,
        guidance_scale,
        seeds,
    )
    _LOGGER.info("Generated %s prior images for %r", num_images, class_prompt)
    return PriorDataset(
        class_prompt=class_prompt, images=quantize(images), task_index=task_index
    )


def subsample_prior(prior: PriorDataset, m: int, seed: int) -> PriorDataset:
    """Uniform draw of ``m`` images without replacement."""
    if m > len(prior):
        raise RangeError(f"cannot draw {m} of {len(prior)} prior images")
    if m < 0:
        raise RangeError(f"subsample size must be non-negative, got {m}")
    order = torch.randperm(len(prior), generator=make_generator(seed))[:m]
    return PriorDataset(
        class_prompt=prior.class_prompt,
        images=prior.images[order],
        task_index=prior.task_index,
    )


def build_pretrain_corpus(
    images_per_family: int,
    seed: int,
    resolution: int,
    templates: Optional[Sequence[PromptTemplate]] = None,
) -> List[Tuple[torch.Tensor, str]]:
    """Generic members of every family; half the prompts name the color."""
    templates = list(templates or load_templates())
    rng = np.random.default_rng(seed)
    corpus = []
    for noun in CONCEPT_NOUNS:
        for index in range(images_per_family):
            color = COLOR_WORDS[int(rng.integers(len(COLOR_WORDS)))]
            image, _ = render_generic(noun, color, rng, resolution)
            template = templates[int(rng.integers(len(templates)))]
            phrase = f"{color} {noun}" if index % 2 == 0 else noun
            corpus.append((from_uint8(image), template.fill(phrase)))
    order = rng.permutation(len(corpus))
    return [corpus[i] for i in order]


def save_task_dataset(dataset: TaskDataset, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for index, sample in enumerate(dataset.samples):
        filename = f"{index:03d}.png"
        save_image(sample.image, directory / filename)
        records.append(
            {
                "file": filename,
                "prompt": sample.prompt,
                "concept_id": sample.concept_id,
                "seed": sample.seed,
            }
        )
    index_data = {
        "task": dataset.task_index,
        "concept": asdict(dataset.concept),
        "samples": records,
    }
    index_text = json.dumps(index_data, indent=2)
    (directory / INDEX_NAME).write_text(index_text, encoding="utf-8")
    return directory


def load_task_dataset(directory: Union[str, Path]) -> TaskDataset:
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    if not index_path.is_file():
        raise MissingArtifactError(index_path, "missing dataset index")
    index_data = json.loads(index_path.read_text(encoding="utf-8"))
    samples = [
        TaskSample(
            image=load_image(directory / record["file"], record["file"]),
            prompt=record["prompt"],
            concept_id=record["concept_id"],
            seed=int(record["seed"]),
        )
        for record in index_data["samples"]
    ]
    concept = ConceptSpec(**index_data["concept"])
    return TaskDataset(
        task_index=int(index_data["task"]), concept=concept, samples=samples
    )


def save_prior_dataset(prior: PriorDataset, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index in range(len(prior)):
        save_image(prior.images[index], directory / f"{index:03d}.png")
    index_data = {
        "class_prompt": prior.class_prompt,
        "task": prior.task_index,
        "count": len(prior),
        "shape": list(prior.images.shape[1:]),
    }
    index_text = json.dumps(index_data, indent=2)
    (directory / INDEX_NAME).write_text(index_text, encoding="utf-8")
    return directory


def load_prior_dataset(directory: Union[str, Path]) -> PriorDataset:
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    if not index_path.is_file():
        raise MissingArtifactError(index_path, "missing prior index")
    index_data = json.loads(index_path.read_text(encoding="utf-8"))
    count = int(index_data["count"])
    images = [load_image(directory / f"{i:03d}.png", i) for i in range(count)]
    if images:
        stacked = torch.stack(images)
    else:
        stacked = torch.empty(0, *index_data["shape"])
    return PriorDataset(
        class_prompt=index_data["class_prompt"],
        images=stacked,
        task_index=int(index_data["task"]),
    )
