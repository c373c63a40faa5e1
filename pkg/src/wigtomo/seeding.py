"""Deterministic RNG stream derivation.

Every stochastic stage derives its generator from a root seed plus a
structured key (operator index, checkpoint, group, ...) via SeedSequence
spawn keys, so results are reproducible bit-for-bit regardless of execution
order or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np


def key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) % (2**32)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(root_seed: int, *key) -> np.random.Generator:
    """Generator for the stream identified by (root_seed, *key)."""
    spawn = tuple(key_part(p) for p in key)
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=spawn))
