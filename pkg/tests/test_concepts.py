"""Tests for procedural concepts, task datasets and prior sets."""
import numpy as np
import pytest
import torch

from conftest import tiny_model

from lifelong_diffusion.data.concepts import ConceptSpec, generate_concept_images
from lifelong_diffusion.data.datasets import (
    PriorDataset,
    TaskDataset,
    build_pretrain_corpus,
    build_prior_dataset,
    class_prompt_for,
    load_prior_dataset,
    load_task_dataset,
    save_prior_dataset,
    save_task_dataset,
    subsample_prior,
)
from lifelong_diffusion.data.templates import PromptTemplate, load_templates
from lifelong_diffusion.diffusion.model import snapshot
from lifelong_diffusion.diffusion.text import (
    COLOR_WORDS,
    CONCEPT_NOUNS,
    Vocabulary,
    tokenize,
)
from lifelong_diffusion.errors import ConfigError, RangeError, SnapshotError


def test_same_spec_and_seed_same_pixels(concept) -> None:
    first = generate_concept_images(concept, 4, seed=1, resolution=16)
    second = generate_concept_images(concept, 4, seed=1, resolution=16)
    assert all(np.array_equal(a, b) for a, b in zip(first, second))


def test_views_are_distinct(concept) -> None:
    images = generate_concept_images(concept, 4, seed=2, resolution=16)
    for i in range(4):
        for j in range(i + 1, 4):
            difference = images[i].astype(float) - images[j].astype(float)
            assert float((difference**2).mean()) > 0


def test_shot_count_bounds(concept) -> None:
    with pytest.raises(RangeError):
        generate_concept_images(concept, 6, seed=0)
    with pytest.raises(RangeError):
        generate_concept_images(concept, 2, seed=0)


def test_concept_spec_validation() -> None:
    with pytest.raises(ConfigError):
        ConceptSpec(
            concept_id="x", token="V1", class_noun="zebra", hue=0.1, texture_seed=1
        )
    with pytest.raises(ConfigError):
        ConceptSpec(
            concept_id="x", token="V1", class_noun="dog", hue=1.5, texture_seed=1
        )


def test_templates_have_one_slot() -> None:
    templates = load_templates()
    assert len(templates) >= 20
    vocabulary = Vocabulary(1)
    for template in templates:
        tokenize(template.fill("dog"), vocabulary, 12)
    with pytest.raises(ConfigError):
        PromptTemplate("a {} and {}", 0)


def test_task_dataset_from_concept(concept) -> None:
    dataset = TaskDataset.from_concept(1, concept, 3, seed=4, resolution=8)
    assert len(dataset) == 3
    assert dataset.images.shape == (3, 3, 8, 8)
    assert dataset.prompts == ["a photo of V1 dog"] * 3
    assert float(dataset.images.min()) >= -1.0 and float(dataset.images.max()) <= 1.0


def test_task_dataset_round_trip(tmp_path, concept) -> None:
    dataset = TaskDataset.from_concept(2, concept, 4, seed=4, resolution=8)
    save_task_dataset(dataset, tmp_path / "data")
    restored = load_task_dataset(tmp_path / "data")
    assert restored.concept == concept
    assert restored.task_index == 2
    assert restored.prompts == dataset.prompts
    assert torch.equal(restored.images, dataset.images)


def test_prior_requires_frozen_model(schedule) -> None:
    with pytest.raises(SnapshotError):
        build_prior_dataset(tiny_model(), schedule, "a photo of dog", 2, 0, 2, 7.0, 2)


def test_prior_size_must_be_positive(schedule) -> None:
    with pytest.raises(RangeError):
        frozen = snapshot(tiny_model())
        build_prior_dataset(frozen, schedule, "a photo of dog", 0, 0, 2, 7.0, 2)


def test_prior_dataset_round_trip(tmp_path, schedule, concept) -> None:
    frozen = snapshot(tiny_model())
    class_prompt = class_prompt_for(concept)
    prior = build_prior_dataset(
        frozen, schedule, class_prompt, 3, 5, 2, 7.0, 2, task_index=1
    )
    assert len(prior) == 3
    assert prior.class_prompt == "a photo of dog"
    save_prior_dataset(prior, tmp_path / "prior")
    restored = load_prior_dataset(tmp_path / "prior")
    assert torch.equal(restored.images, prior.images)
    assert restored.task_index == 1


def _prior(count: int) -> PriorDataset:
    images = torch.arange(count, dtype=torch.float32).reshape(count, 1, 1, 1)
    images = images.expand(count, 3, 2, 2)
    return PriorDataset(class_prompt="a photo of dog", images=images.clone())


def test_subsample_full_size_keeps_content() -> None:
    prior = _prior(4)
    drawn = subsample_prior(prior, 4, seed=3)
    assert sorted(drawn.images[:, 0, 0, 0].tolist()) == [0.0, 1.0, 2.0, 3.0]


def test_subsample_matches_seeded_draw() -> None:
    prior = _prior(4)
    drawn = subsample_prior(prior, 2, seed=11)
    generator = torch.Generator().manual_seed(11)
    expected = torch.randperm(4, generator=generator)[:2]
    assert drawn.images[:, 0, 0, 0].tolist() == expected.to(torch.float32).tolist()


def test_empty_prior_keeps_image_shape(tmp_path) -> None:
    empty = subsample_prior(_prior(3), 0, seed=0)
    assert empty.images.shape == (0, 3, 2, 2)
    save_prior_dataset(empty, tmp_path / "prior")
    restored = load_prior_dataset(tmp_path / "prior")
    assert restored.images.shape == (0, 3, 2, 2)
    assert len(restored) == 0


def test_subsample_too_many() -> None:
    with pytest.raises(RangeError):
        subsample_prior(_prior(2), 3, seed=0)


def test_pretrain_corpus_mentions_every_noun_and_color() -> None:
    corpus = build_pretrain_corpus(48, seed=0, resolution=8)
    assert len(corpus) == 48 * len(CONCEPT_NOUNS)
    words = {word for _, prompt in corpus for word in prompt.split()}
    assert set(CONCEPT_NOUNS) <= words
    assert set(COLOR_WORDS) <= words
