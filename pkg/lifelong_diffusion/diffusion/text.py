"""Closed-vocabulary prompt encoding with registrable personalized tokens."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple

import torch
from torch import nn

from ..errors import (
    ConfigError,
    EmptyPromptError,
    PairingError,
    RangeError,
    UnknownTokenError,
)

_LOGGER = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
START_TOKEN = "<start>"
PAD_ID = 0
START_ID = 1

# Nouns that name a prior concept; each maps to a procedural shape family.
CONCEPT_NOUNS: Tuple[str, ...] = ("dog", "toy", "cat", "backpack", "teddybear")
COLOR_WORDS: Tuple[str, ...] = (
    "red",
    "orange",
    "yellow",
    "green",
    "cyan",
    "blue",
    "purple",
    "pink",
)
_FILLER_WORDS: Tuple[str, ...] = (
    "a", "an", "and", "at", "of", "on", "in", "near", "with", "the", "to",
    "photo", "picture", "painting", "drawing", "image", "sketch", "style",
    "close", "small", "big", "tiny", "large", "bright", "dark", "cute",
    "colorful", "two", "together", "next", "park", "beach", "snow", "table",
    "street", "night", "forest", "grass", "river", "room", "floor", "hat",
    "city",
)
BASE_WORDS: Tuple[str, ...] = _FILLER_WORDS + CONCEPT_NOUNS + COLOR_WORDS


class Vocabulary:
    """Closed word list plus a fixed number of personalized token slots.

    Ids ``[0, len(words))`` index the base table; ids from ``len(words)`` on
    index personalized slots in registration order.
    """

    def __init__(
        self,
        personalized_slots: int = 8,
        words: Tuple[str, ...] = BASE_WORDS,
        concept_nouns: Tuple[str, ...] = CONCEPT_NOUNS,
    ) -> None:
        self.words: List[str] = [PAD_TOKEN, START_TOKEN] + list(words)
        self._index: Dict[str, int] = {word: i for i, word in enumerate(self.words)}
        if len(self._index) != len(self.words):
            raise ConfigError("vocabulary", "duplicate words")
        self.concept_nouns = tuple(concept_nouns)
        self.personalized_slots = personalized_slots
        # token -> (slot, class noun)
        self._personalized: Dict[str, Tuple[int, str]] = {}

    @property
    def base_size(self) -> int:
        return len(self.words)

    @property
    def size(self) -> int:
        return len(self.words) + self.personalized_slots

    @property
    def personalized_tokens(self) -> List[str]:
        return list(self._personalized)

    def is_registered(self, token: str) -> bool:
        return token in self._personalized

    def class_noun_of(self, token: str) -> str:
        return self._personalized[token][1]

    def register_personalized(self, token: str, class_noun: str) -> int:
        """Assign the next free slot to ``token``; returns its id."""
        if token in self._personalized:
            slot, noun = self._personalized[token]
            if noun != class_noun:
                raise ConfigError(token, f"already registered for {noun!r}")
            return self.base_size + slot
        if token in self._index or token.lower() in self._index:
            raise ConfigError(
                token, "personalized token collides with a vocabulary word"
            )
        if class_noun not in self.concept_nouns:
            raise ConfigError(token, f"class noun {class_noun!r} is not a concept noun")
        if len(self._personalized) >= self.personalized_slots:
            raise RangeError(f"no free personalized slot for {token!r}")
        slot = len(self._personalized)
        self._personalized[token] = (slot, class_noun)
        _LOGGER.debug("Registered personalized token %s in slot %s", token, slot)
        return self.base_size + slot

    def token_id(self, token: str) -> int:
        if token in self._personalized:
            return self.base_size + self._personalized[token][0]
        return self._index[token]

    def state_dict(self) -> Dict[str, Any]:
        return {
            "words": self.words[2:],
            "concept_nouns": list(self.concept_nouns),
            "personalized_slots": self.personalized_slots,
            "personalized": [
                {"token": token, "slot": slot, "class_noun": noun}
                for token, (slot, noun) in self._personalized.items()
            ],
        }

    @classmethod
    def from_state(cls, state: Mapping[str, Any]) -> "Vocabulary":
        vocabulary = cls(
            personalized_slots=int(state["personalized_slots"]),
            words=tuple(state["words"]),
            concept_nouns=tuple(state["concept_nouns"]),
        )
        for record in sorted(state["personalized"], key=lambda r: r["slot"]):
            vocabulary.register_personalized(record["token"], record["class_noun"])
        return vocabulary

    def copy(self) -> "Vocabulary":
        return Vocabulary.from_state(self.state_dict())


@dataclass(frozen=True)
class TokenSequence:
    """Token ids of one prompt, starting with the start token."""

    ids: Tuple[int, ...]
    concept_indices: Tuple[int, ...]
    personalized_indices: Tuple[int, ...]
    raw_text: str

    def __len__(self) -> int:
        return len(self.ids)

    def padded(self, length: int) -> List[int]:
        if len(self.ids) > length:
            raise RangeError(f"prompt has {len(self.ids)} tokens, limit is {length}")
        return list(self.ids) + [PAD_ID] * (length - len(self.ids))

    def pairing(self) -> Dict[int, int]:
        """Pair each personalized token with the concept token right after it."""
        pairs: Dict[int, int] = {}
        for index in self.personalized_indices:
            if index + 1 not in self.concept_indices:
                raise PairingError(
                    f"personalized token at position {index} of {self.raw_text!r} "
                    "is not followed by a concept noun"
                )
            pairs[index] = index + 1
        return pairs


@dataclass(frozen=True)
class ConditionEmbedding:
    """Batched text conditioning; ``matrix`` is (B, s, d), ``mask`` marks tokens."""

    matrix: torch.Tensor
    mask: torch.Tensor

    def expand(self, batch: int) -> "ConditionEmbedding":
        if self.matrix.shape[0] == batch:
            return self
        return ConditionEmbedding(
            matrix=self.matrix.expand(batch, -1, -1),
            mask=self.mask.expand(batch, -1),
        )


def tokenize(
    prompt: str, vocabulary: Vocabulary, max_tokens: Optional[int] = None
) -> TokenSequence:
    words = prompt.split()
    if not words:
        raise EmptyPromptError("prompt is empty")

    ids = [START_ID]
    concept_indices: List[int] = []
    personalized_indices: List[int] = []
    unknown: List[str] = []
    for word in words:
        position = len(ids)
        if vocabulary.is_registered(word):
            ids.append(vocabulary.token_id(word))
            personalized_indices.append(position)
            continue
        lowered = word.lower()
        if lowered not in vocabulary.words:
            unknown.append(word)
            ids.append(PAD_ID)
            continue
        ids.append(vocabulary.token_id(lowered))
        if lowered in vocabulary.concept_nouns:
            concept_indices.append(position)

    if unknown:
        raise UnknownTokenError(unknown)
    if max_tokens is not None and len(ids) > max_tokens:
        raise RangeError(
            f"prompt {prompt!r} has {len(ids)} tokens, limit is {max_tokens}"
        )

    return TokenSequence(
        ids=tuple(ids),
        concept_indices=tuple(concept_indices),
        personalized_indices=tuple(personalized_indices),
        raw_text=prompt,
    )


def sinusoidal_codes(length: int, dim: int) -> torch.Tensor:
    """Fixed (length, dim) position codes."""
    positions = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    frequencies = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    codes = torch.zeros(length, dim, dtype=torch.float64)
    codes[:, 0::2] = torch.sin(positions * frequencies)
    codes[:, 1::2] = torch.cos(positions * frequencies[: dim // 2])
    return codes.to(torch.float32)


class TextEncoder(nn.Module):
    """Token embedding table plus frozen sinusoidal position codes."""

    def __init__(
        self,
        base_size: int,
        personalized_slots: int,
        embed_dim: int,
        max_tokens: int,
    ) -> None:
        super().__init__()
        self.base_size = base_size
        self.max_tokens = max_tokens
        self.token_embedding = nn.Embedding(base_size, embed_dim)
        self.personalized_embedding = nn.Parameter(
            torch.randn(personalized_slots, embed_dim) * 0.02
        )
        self.register_buffer(
            "position_codes",
            sinusoidal_codes(max_tokens, embed_dim),
            persistent=False,
        )

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        is_personal = token_ids >= self.base_size
        base = self.token_embedding(token_ids.clamp(max=self.base_size - 1))
        slots = (token_ids - self.base_size).clamp(min=0)
        personal = self.personalized_embedding[slots]
        embedded = torch.where(is_personal.unsqueeze(-1), personal, base)
        positions = self.position_codes[: token_ids.shape[-1]].to(embedded.dtype)
        return embedded + positions

    @torch.no_grad()
    def initialize_personalized(self, token_id: int, source_id: int) -> None:
        """Copy the embedding of ``source_id`` into personalized row ``token_id``."""
        slot = token_id - self.base_size
        self.personalized_embedding[slot] = self.token_embedding.weight[source_id]
