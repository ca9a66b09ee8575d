"""
Stable hashing and derived random streams.

All stochastic stages draw from numpy Generators seeded by a SeedSequence
built from integers only, so a given (seed, key...) tuple yields the same
stream on every run and platform.
"""

from typing import Union

import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(text: str) -> int:
    """
    64-bit FNV-1a over the UTF-8 bytes of text.

    h = 0xcbf29ce484222325; for each byte: h ^= byte; h = (h * 0x100000001b3) mod 2**64.
    """
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def _entropy(key: Union[int, str]) -> list[int]:
    if isinstance(key, bool) or not isinstance(key, (int, str)):
        raise TypeError(f"Seed keys must be int or str, got {type(key).__name__}")
    if isinstance(key, str):
        h = fnv1a_64(key)
        return [h & 0xFFFFFFFF, h >> 32]
    if key < 0:
        raise ValueError(f"Seed keys must be non-negative, got {key}")
    return [key & 0xFFFFFFFF, key >> 32]


def derive_rng(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Return a Generator for the substream named by (seed, *keys)."""
    entropy = _entropy(seed)
    for key in keys:
        entropy.extend(_entropy(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))
