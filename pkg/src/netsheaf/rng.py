"""Seed derivation for reproducible sweeps.

All randomness flows through numpy's counter-based Philox generator
(4x64, 10 rounds). Sweep cells derive independent child streams from
the master seed plus a path of small integers (grid indices, seed
replicate indices), so output never depends on worker count or
scheduling order. The generator name is recorded in every CSV header.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "numpy-philox4x64"


def derive(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream addressed by (seed, *path)."""
    entropy = [int(seed)] + [int(x) for x in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(rng) -> np.random.Generator:
    """Pass through a Generator, or derive one from an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return derive(int(rng))
