"""Counter-based seed derivation.

Every stage draws from ``SeedSequence([master, crc32(stage), index])`` so
re-running one stage never shifts the random stream of another.
"""
from __future__ import annotations

import zlib

import numpy as np


def stage_sequence(master: int, stage: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF,
                                   zlib.crc32(stage.encode()), int(index)])


def stage_rng(master: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(stage_sequence(master, stage, index))


def stage_seed(master: int, stage: str, index: int = 0) -> int:
    """A plain 63-bit integer seed for APIs that take ints."""
    return int(stage_sequence(master, stage, index).generate_state(1, np.uint64)[0] >> 1)
