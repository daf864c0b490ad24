"""Deterministic named RNG substreams derived from one master seed.

All randomness in the toolkit flows through `substream` so that a single
seed reproduces every run bit-for-bit, regardless of how many independent
consumers (weight init, scene rendering, batch shuffling, ...) exist.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for (seed, *keys).

    String keys are hashed with crc32 so the stream is stable across runs
    and platforms (unlike the builtin ``hash``).
    """
    words = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode("utf-8")))
        else:
            words.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(words)
