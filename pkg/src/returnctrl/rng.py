"""Seeded random generators with a pinned algorithm."""
from __future__ import annotations

import numpy as np

from .errors import ParameterError

GENERATORS = ("PCG64", "PCG64DXSM", "SFC64", "Philox", "MT19937")
DEFAULT_GENERATOR = "PCG64"


def make_rng(seed: int, generator: str = DEFAULT_GENERATOR) -> np.random.Generator:
    if generator not in GENERATORS:
        raise ParameterError(f"unknown generator {generator!r}; choose one of {GENERATORS}")
    if not 0 <= int(seed) < 2**64:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(getattr(np.random, generator)(int(seed)))
