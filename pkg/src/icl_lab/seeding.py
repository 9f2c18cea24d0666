"""Seed derivation shared by every generator and runner.

A master seed is split into independent streams with numpy's
``SeedSequence`` spawn keys, so trial ``k`` of stream ``name`` always sees
the same bits no matter how many worker threads the runner uses. This
derivation is part of the results-file contract: changing it changes every
CSV.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def seed_sequence(seed, *keys) -> np.random.SeedSequence:
    """SeedSequence for ``seed`` extended by a counter/label path ``keys``."""
    if isinstance(seed, np.random.SeedSequence):
        base = seed
        return np.random.SeedSequence(
            base.entropy, spawn_key=tuple(base.spawn_key) + tuple(_key(k) for k in keys)
        )
    if isinstance(seed, (bool, float)) or seed is None:
        raise TypeError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(seed, spawn_key=tuple(_key(k) for k in keys))


def make_rng(seed, *keys) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional stream path."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed, *keys) -> int:
    """Integer child seed, for handing to functions that take plain ints."""
    return int(seed_sequence(seed, *keys).generate_state(2, np.uint32).view(np.uint64)[0])


def as_rng(seed) -> np.random.Generator:
    """Accept an integer seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed)
