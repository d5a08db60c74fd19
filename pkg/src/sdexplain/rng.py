"""Seeded random streams.

All randomness in the package flows from a single integer seed through
Philox counter-based generators.  Child streams are derived by integer
keys, so parallel work can grab independent streams without coordinating.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A reproducible random stream with cheap, collision-free children.

    Two streams built from the same seed and key path produce identical
    draws; children with distinct key paths are statistically independent.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = _key
        seq = np.random.SeedSequence(self.seed, spawn_key=_key)
        self.gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key: int) -> "RngStream":
        """Derive an independent stream addressed by `key`."""
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size=size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self.gen.permutation(x)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"
