"""Hierarchical, reproducible random streams.

Every random draw in the package is taken from a ``numpy.random.Generator``
derived from a master seed and a stream path such as
``("equipartition", "binary", "rep", 3)``.  Identical paths give identical
streams; distinct paths give statistically independent streams (via
``SeedSequence`` spawn keys).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


def _path_key(part) -> int:
    # hash() is salted per process, so strings go through sha256.
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") | (1 << 32)


@dataclass(frozen=True)
class RngContract:
    master_seed: int
    stream_id: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "stream_id", tuple(self.stream_id))

    def child(self, *parts) -> "RngContract":
        return RngContract(self.master_seed, self.stream_id + tuple(parts))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.master_seed),
            spawn_key=tuple(_path_key(p) for p in self.stream_id),
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngContract, a Generator, or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngContract):
        return rng.generator()
    if rng is None:
        raise ValueError("an explicit RngContract or Generator is required")
    return RngContract(int(rng)).generator()
