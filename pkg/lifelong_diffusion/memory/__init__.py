"""Rainbow memory: long-term features and prompts, short-term rehearsal images."""
from .banks import (
    LongTermBank,
    LongTermEntry,
    ShortTermBank,
    ShortTermEntry,
    load_bank,
    save_bank,
    update_long_term,
)
from .selection import (
    generate_candidates,
    score,
    select_from_candidates,
    select_short_term,
)

__all__ = [
    "LongTermBank",
    "LongTermEntry",
    "ShortTermBank",
    "ShortTermEntry",
    "generate_candidates",
    "load_bank",
    "save_bank",
    "score",
    "select_from_candidates",
    "select_short_term",
    "update_long_term",
]
