"""Seeded random streams.

Every random operation draws from a Philox generator keyed by a single
64-bit root seed plus a tuple of integer/string tags, so child streams are
reproducible and independent of call order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFFFFFFFFFF


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the given stream tags."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(_tag(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
