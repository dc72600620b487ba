"""Reproducible random number generation.

The engine pins a single generator family so that identical seeds
reproduce identical runs across machines: PCG64 as shipped in
``numpy.random``, consuming one 64-bit draw per uniform double.  Result
files record both the algorithm name and the seed.

Per-image generators are derived from the run seed and a stable hash of
the image's relative path, so results do not depend on traversal order
or worker count.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "pcg64"

_MASK64 = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator implementing the pinned algorithm."""
    return np.random.Generator(np.random.PCG64(seed & _MASK64))


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer; the standard 64-bit avalanche mix."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix64(a: int, b: int) -> int:
    """Combine two 64-bit values into a well-mixed derived seed."""
    return splitmix64((a & _MASK64) ^ splitmix64(b & _MASK64))


def stable_hash(text: str) -> int:
    """FNV-1a 64-bit hash of a UTF-8 string; stable across runs and platforms."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def per_image_seed(global_seed: int, relative_path: str) -> int:
    """Derived seed for one image, independent of scheduling order."""
    return mix64(global_seed, stable_hash(relative_path))
