"""
Deterministic random substreams.

A stream is identified by (seed, path). Its generator is a counter-based Philox
keyed through numpy's SeedSequence spawn key, so a stream's output depends only
on its identity and never on which thread consumes it or on how many sibling
streams were drawn before.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

# Purpose tags used as the third path component by the engines.
PURPOSE_SAMPLE = 0
PURPOSE_GROW = 1
PURPOSE_FINAL = 2
PURPOSE_SNAPSHOT = 3
PURPOSE_AUDIT = 4


@dataclass(frozen=True)
class RandomStream:
    """Identity of a reproducible random stream."""

    seed: int
    path: Tuple[int, ...]

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *path: int) -> "RandomStream":
        """Return the stream whose path extends this one."""
        return derive_substream(self.seed, tuple(self.path) + tuple(path))


def derive_substream(seed: int, path: Sequence[int]) -> RandomStream:
    """
    Derive the substream identified by (seed, path).

    Args:
        seed: 64-bit non-negative seed
        path: non-empty sequence of non-negative integers, typically
              (repetition, stage, iteration, purpose, block)

    Returns:
        RandomStream
    """
    path = tuple(int(p) for p in path)
    if not path:
        raise ValueError("substream path must be non-empty")
    if seed < 0 or any(p < 0 for p in path):
        raise ValueError("seed and path components must be non-negative")
    return RandomStream(seed=int(seed) & 0xFFFFFFFFFFFFFFFF, path=path)
