"""Splittable seeding: every stage derives its own stream from the master seed."""
import hashlib

import torch

_SEED_MASK = (1 << 63) - 1


def derive_seed(master: int, stage: str) -> int:
    """Hash ``"{master}:{stage}"`` into a 63-bit seed."""
    digest = hashlib.sha256(f"{master}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _SEED_MASK


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def stage_generator(master: int, stage: str) -> torch.Generator:
    return make_generator(derive_seed(master, stage))
