"""Deterministic RNG stream derivation.

Every stochastic component draws from a numpy Generator whose SeedSequence
is derived from a root seed plus an integer key path, so any unit of work
(dataset row, detector, posterior sample) is reproducible from
(seed, key...) alone and independent of evaluation order.
"""

from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence"


def child_sequence(root, *key: int) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by `key` under `root`.

    `root` may be an integer seed or an existing SeedSequence; in the latter
    case the key path is appended to its spawn key.
    """
    if isinstance(root, np.random.SeedSequence):
        return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + key)
    return np.random.SeedSequence(root, spawn_key=key)


def child_rng(root, *key: int) -> np.random.Generator:
    """Generator seeded from child_sequence(root, *key)."""
    return np.random.default_rng(child_sequence(root, *key))


def as_rng(seed_or_rng) -> np.random.Generator:
    """Pass a Generator through unchanged; otherwise seed a new one."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)
