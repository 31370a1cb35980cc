"""Counter-based random streams.

A stream is the pair ``(seed, counter)`` used as the 128-bit Philox key,
so any block of draws can be regenerated without replaying the blocks
before it.  Operations that need several independent blocks derive them
with :meth:`RngStream.child` or by stepping the counter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    counter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "counter", int(self.counter) & _MASK64)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=np.array([self.seed, self.counter], dtype=np.uint64)))

    def advance(self, steps: int = 1) -> "RngStream":
        return RngStream(self.seed, self.counter + steps)

    def child(self, label: str | int) -> "RngStream":
        """Independent stream keyed by ``label`` (stable across runs and platforms)."""
        h = hashlib.blake2b(f"{self.seed}:{self.counter}:{label}".encode(), digest_size=16).digest()
        return RngStream(int.from_bytes(h[:8], "little"), int.from_bytes(h[8:], "little"))

    def normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)
