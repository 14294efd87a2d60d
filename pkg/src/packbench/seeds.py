"""Seed-stream derivation.

All randomness in the project flows from a single non-negative 64-bit seed.
Independent substreams are derived with numpy SeedSequence spawn keys, so a
consumer that needs randomness for (generation g, slot j) asks for
``stream(seed, g, j)`` and gets the same generator no matter how many other
streams were consumed before it. This is what makes parallel evaluation
incapable of perturbing results.
"""

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for the given seed and spawn key."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A child seed (non-negative 63-bit int) for the given spawn key."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)
