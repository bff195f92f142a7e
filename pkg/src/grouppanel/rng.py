"""Deterministic random-stream derivation.

Every stochastic routine in the package derives its generator from an
integer key tuple via ``numpy.random.SeedSequence``.  The rule is:
``generator(a, b, ...)`` feeds the tuple ``(a, b, ...)`` as the seed
sequence entropy, so streams are reproducible and independent of
execution order or parallelism.
"""

from __future__ import annotations

import numpy as np


def seed_sequence(*parts: int) -> np.random.SeedSequence:
    """Build a SeedSequence from a tuple of integer key parts."""
    return np.random.SeedSequence(tuple(int(p) for p in parts))


def generator(*parts: int) -> np.random.Generator:
    """PCG64 generator keyed by the integer tuple ``parts``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))
