"""Deterministic random streams built on the counter-based Philox generator.

A stream is identified by a ``(seed, stream_id)`` pair which keys Philox
directly, so the same pair reproduces the same draws on any platform and
distinct stream ids give statistically independent sequences.  Sub-streams
for workers, repetitions, or pipeline steps are derived by mixing a tag into
the stream id, which keeps parallel sections reproducible regardless of
scheduling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return (z ^ (z >> 31)) & _U64


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, str):
        digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return tag & _U64


@dataclass(frozen=True)
class RngStream:
    """Immutable handle for one reproducible random stream."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", self.seed & _U64)
        object.__setattr__(self, "stream_id", self.stream_id & _U64)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def fork(self, tag: int | str) -> "RngStream":
        """Derive an independent sub-stream named by ``tag``."""
        mixed = _splitmix64(self.stream_id ^ _splitmix64(_tag_to_int(tag)))
        return RngStream(self.seed, mixed)
