"""Deterministic RNG stream derivation from a root seed plus string tags."""

import zlib

import numpy as np


def derive_rng(seed, *tags):
    """Independent numpy Generator for (seed, tags); stable across runs."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
