"""Seeded random streams with labeled, independent sub-streams.

Every stochastic component (weight init, diffusion noise, dataset draws,
per-condition pipelines) pulls from its own labeled sub-stream so that
serial and parallel execution orders produce identical results.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["SeedStream"]


def _label_words(label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


class SeedStream:
    """A deterministic random stream derived from an integer seed.

    Sub-streams are derived by label (``stream("init")``), not by draw
    order, so adding draws to one component never shifts another.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        if not isinstance(seed, (int, np.integer)):
            raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
        self.seed = int(seed)
        self._key = _key
        self._gen = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(self.seed, spawn_key=_key)))

    def stream(self, label: str) -> "SeedStream":
        """Derive an independent sub-stream identified by ``label``."""
        return SeedStream(self.seed, self._key + _label_words(label))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high), matching numpy's half-open convention."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)
