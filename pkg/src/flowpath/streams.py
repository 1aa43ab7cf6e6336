"""Deterministic RNG stream derivation.

Every stochastic component draws from a stream derived from the master seed
and a structured key, so results are reproducible regardless of execution
order or parallel scheduling.  Domains keep unrelated consumers (walk
generation, weight init, ...) from colliding on the same stream.
"""

from __future__ import annotations

import numpy as np

# stream domains
WALKS = 0
INIT = 1
SHORTEST_PATH = 2
INFLUENCE = 3
RESAMPLE = 4


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for (master_seed, key).

    The key is a tuple of non-negative integers, e.g. ``(WALKS, layer,
    iteration, node)``.  Identical inputs always yield the identical stream.
    """
    if master_seed < 0:
        raise ValueError(f"master seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)
