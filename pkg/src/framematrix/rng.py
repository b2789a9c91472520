"""Keyed counter-based random draws.

Every stochastic draw in the sampling pipeline is produced by a Philox
generator keyed by (master seed, site key). Because a draw depends only on
its key and never on call order, serial and parallel schedules produce
bit-identical results, and the temporal/spatial alternation cannot
desynchronize noise streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_words(seed: int, parts: tuple) -> np.ndarray:
    """Hash (seed, *parts) into the 128-bit Philox key, stable across runs."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(seed).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(repr(part).encode())
    digest = h.digest()
    return np.frombuffer(digest, dtype=np.uint64)


class KeyedRng:
    """Deterministic normal draws addressed by a structured key.

    Keys are tuples of ints/strings identifying the draw site, e.g.
    ``("xi", t, n, "temporal", s, v)``. The same (seed, key) always yields
    the same values regardless of how many other draws happened before.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def normal(self, shape: tuple, *key) -> np.ndarray:
        bitgen = np.random.Philox(key=_key_words(self.seed, key))
        return np.random.Generator(bitgen).standard_normal(shape, dtype=np.float64)

    def child(self, tag: str) -> "KeyedRng":
        """Independent stream for a sub-phase (keys never collide with the parent's)."""
        h = hashlib.blake2b(f"{self.seed}:{tag}".encode(), digest_size=8)
        return KeyedRng(int.from_bytes(h.digest(), "little"))
