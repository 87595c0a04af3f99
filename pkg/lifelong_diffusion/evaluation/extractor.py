"""Small image/text dual encoder with a shared unit-sphere feature space.

It is fit once, contrastively, on generic renders of every shape family and
then frozen; memory selection and evaluation share the same instance.
Words outside its vocabulary, personalized tokens included, are skipped.
"""
import logging
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..config import ExtractorConfig
from ..data.templates import PromptTemplate, load_templates
from ..diffusion.checkpoint import load_module_state, read_manifest, save_module
from ..diffusion.text import BASE_WORDS, COLOR_WORDS, CONCEPT_NOUNS, PAD_ID, Vocabulary
from ..errors import CoverageError, EmptyPromptError, TrainingFailureError
from ..seeding import derive_seed, make_generator

_LOGGER = logging.getLogger(__name__)

Corpus = Sequence[Tuple[torch.Tensor, str]]


class FeatureExtractor(nn.Module):
    def __init__(
        self,
        config: ExtractorConfig,
        channels: int = 3,
        words: Tuple[str, ...] = BASE_WORDS,
    ) -> None:
        super().__init__()
        self.config = config
        self.vocabulary = Vocabulary(personalized_slots=0, words=words)
        hidden = config.hidden_channels
        self.image_tower = nn.Sequential(
            nn.Conv2d(channels, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, hidden * 2, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(hidden * 2, config.feature_dim),
        )
        self.word_embedding = nn.Embedding(
            self.vocabulary.base_size, hidden, padding_idx=PAD_ID
        )
        self.text_head = nn.Sequential(
            nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, config.feature_dim)
        )
        self.heldout_accuracy = float("nan")

    @property
    def words(self) -> Tuple[str, ...]:
        return tuple(self.vocabulary.words[2:])

    def word_ids(self, prompt: str) -> List[int]:
        known = [
            word.lower()
            for word in prompt.split()
            if word.lower() in self.vocabulary.words
        ]
        if not known:
            raise EmptyPromptError(f"no known words in {prompt!r}")
        return [self.vocabulary.token_id(word) for word in known]

    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        """(N, C, H, W) -> (N, d) unit-norm features."""
        return F.normalize(self.image_tower(images.to(torch.float32)), dim=-1)

    def encode_texts(self, prompts: Sequence[str]) -> torch.Tensor:
        """Mean word embedding through a small head; (N, d) unit-norm."""
        rows = [self.word_ids(prompt) for prompt in prompts]
        width = max(len(row) for row in rows)
        ids = torch.tensor(
            [row + [PAD_ID] * (width - len(row)) for row in rows], dtype=torch.long
        )
        mask = (ids != PAD_ID).unsqueeze(-1).to(torch.float32)
        pooled = (self.word_embedding(ids) * mask).sum(dim=1) / mask.sum(dim=1)
        return F.normalize(self.text_head(pooled), dim=-1)

    def encode_text(self, prompt: str) -> torch.Tensor:
        return self.encode_texts([prompt])[0]


def extractor_words(
    templates: Optional[Sequence[PromptTemplate]] = None,
) -> Tuple[str, ...]:
    """Template words plus every concept noun and color, in vocabulary order."""
    templates = list(templates or load_templates())
    used = {
        word.lower() for template in templates for word in template.fill("").split()
    }
    used.update(CONCEPT_NOUNS + COLOR_WORDS)
    return tuple(word for word in BASE_WORDS if word in used)


def check_coverage(corpus: Corpus, words: Sequence[str]) -> None:
    """Every vocabulary word must appear in at least one corpus prompt."""
    seen = {word.lower() for _, prompt in corpus for word in prompt.split()}
    missing = [word for word in words if word not in seen]
    if missing:
        raise CoverageError(f"extractor corpus never mentions {', '.join(missing)}")


def prompt_content(prompt: str) -> Tuple[Optional[str], Optional[str]]:
    """(concept noun, color) named by a prompt; either may be absent."""
    words = [word.lower() for word in prompt.split()]
    noun = next((word for word in words if word in CONCEPT_NOUNS), None)
    color = next((word for word in words if word in COLOR_WORDS), None)
    return noun, color


def describes_other_content(first: str, second: str) -> bool:
    """True when two prompts cannot describe the same image."""
    (noun_a, color_a), (noun_b, color_b) = prompt_content(first), prompt_content(second)
    if noun_a != noun_b:
        return True
    return color_a is not None and color_b is not None and color_a != color_b


def contrastive_loss(
    image_features: torch.Tensor, text_features: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Symmetric cross-entropy over the image/text similarity matrix."""
    logits = image_features @ text_features.T / temperature
    targets = torch.arange(logits.shape[0])
    return 0.5 * (
        F.cross_entropy(logits, targets) + F.cross_entropy(logits.T, targets)
    )


@torch.no_grad()
def retrieval_accuracy(extractor: FeatureExtractor, corpus: Corpus) -> float:
    """Share of mismatched pairs (i, j) where image i is closer to its own prompt.

    A pair is mismatched when prompt j names another concept noun or a
    conflicting color; template wording alone does not make a mismatch.
    """
    images = torch.stack([image for image, _ in corpus])
    prompts = [prompt for _, prompt in corpus]
    similarity = extractor.encode_images(images) @ extractor.encode_texts(prompts).T
    matched = similarity.diagonal().unsqueeze(1)
    different = torch.tensor(
        [[describes_other_content(a, b) for b in prompts] for a in prompts]
    )
    wins = (matched > similarity) & different
    return float(wins.sum()) / max(int(different.sum()), 1)


def fit_extractor(
    corpus: Corpus,
    config: ExtractorConfig,
    seed: int,
    channels: int = 3,
    templates: Optional[Sequence[PromptTemplate]] = None,
) -> FeatureExtractor:
    words = extractor_words(templates)
    check_coverage(corpus, words)
    train_pairs, heldout_pairs = split_corpus(
        corpus, min(config.heldout_images, len(corpus) // 5)
    )

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "extractor-init"))
        extractor = FeatureExtractor(config, channels, words)
    images = torch.stack([image for image, _ in train_pairs])
    prompts = [prompt for _, prompt in train_pairs]
    optimizer = torch.optim.Adam(extractor.parameters(), lr=config.learning_rate)
    generator = make_generator(derive_seed(seed, "extractor-batches"))

    extractor.train()
    progress = tqdm(range(config.steps), desc="extractor", leave=False, disable=None)
    for step in progress:
        index = torch.randperm(len(train_pairs), generator=generator)
        index = index[: config.batch_size]
        optimizer.zero_grad()
        loss = contrastive_loss(
            extractor.encode_images(images[index]),
            extractor.encode_texts([prompts[i] for i in index.tolist()]),
            config.temperature,
        )
        loss.backward()
        optimizer.step()
        progress.set_postfix(loss=float(loss))
        _LOGGER.debug("Extractor step %s: loss %.4f", step, float(loss))

    freeze(extractor)
    if heldout_pairs:
        extractor.heldout_accuracy = retrieval_accuracy(extractor, heldout_pairs)
        _LOGGER.info(
            "Feature extractor held-out retrieval accuracy: %.3f",
            extractor.heldout_accuracy,
        )
        if extractor.heldout_accuracy < config.min_retrieval_accuracy:
            raise TrainingFailureError(
                f"feature extractor retrieval accuracy {extractor.heldout_accuracy:.3f}"
                f" is below {config.min_retrieval_accuracy}"
            )
    return extractor


def freeze(extractor: FeatureExtractor) -> FeatureExtractor:
    for parameter in extractor.parameters():
        parameter.requires_grad_(False)
    extractor.eval()
    return extractor


def save_extractor(
    extractor: FeatureExtractor, directory: Union[str, Path], tag: str = "extractor"
) -> Path:
    manifest = {
        "tag": tag,
        "config": asdict(extractor.config),
        "channels": extractor.image_tower[0].in_channels,
        "words": list(extractor.words),
        "heldout_accuracy": extractor.heldout_accuracy,
    }
    return save_module(extractor, directory, manifest)


def load_extractor(directory: Union[str, Path]) -> FeatureExtractor:
    manifest = read_manifest(directory)
    extractor = FeatureExtractor(
        ExtractorConfig(**manifest["config"]),
        int(manifest["channels"]),
        tuple(manifest["words"]),
    )
    load_module_state(extractor, directory, manifest)
    extractor.heldout_accuracy = float(manifest.get("heldout_accuracy", float("nan")))
    return freeze(extractor)


def split_corpus(corpus: Corpus, heldout: int) -> Tuple[List, List]:
    """Last ``heldout`` pairs are held out."""
    return list(corpus[: len(corpus) - heldout]), list(corpus[len(corpus) - heldout :])
