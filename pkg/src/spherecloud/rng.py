"""Seeded random-number streams.

Every randomized stage in this package draws from PCG64 generators derived
from a single integer seed via ``numpy.random.SeedSequence.spawn``.  Spawning
gives independent, platform-portable substreams, so a stage that needs both a
shuffle stream and a noise stream consumes them in a fixed, documented order
and stays reproducible bit-for-bit regardless of how much either stream draws.
"""

from __future__ import annotations

import numpy as np


def substreams(seed: int, n: int) -> list[np.random.Generator]:
    """Return n independent generators derived from one seed.

    Substream order is part of the on-disk compatibility contract: callers
    document which substream index feeds which stage.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def generator(seed: int) -> np.random.Generator:
    """Single-stream convenience wrapper."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
