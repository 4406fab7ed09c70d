"""Seeded, splittable random streams.

Streams are backed by the Philox counter-based bit generator, so a
given 64-bit seed reproduces the same draws on every platform. Named
substreams are derived by hashing the parent key with a label, which
lets one experiment seed drive independent noise/init/optimizer
streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    """Deterministic random stream with derivable substreams."""

    algorithm = "philox4x64"

    def __init__(self, seed, _key=None):
        self.seed = int(seed)
        self._key = self.seed if _key is None else int(_key)
        self._gen = np.random.Generator(np.random.Philox(key=self._key))

    def substream(self, label):
        """Independent stream derived from this seed and a label."""
        digest = hashlib.sha256(f"{self._key}/{label}".encode()).digest()
        key = int.from_bytes(digest[:16], "little")
        return RngStream(self.seed, _key=key)

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self._gen.normal(loc=loc, scale=scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low=low, high=high, size=size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)
