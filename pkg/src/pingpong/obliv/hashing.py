"""Seeded 64-bit mixing for bucket and bin placement (splitmix64 finalizer).

Not cryptographic: routing positions may be observed by design, they only
need to look uniform and be reproducible across backends.  The numba kernels
inline the same constants; cross-backend equality is tested.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)


def mix64(x: np.ndarray | int) -> np.ndarray:
    """Vectorized splitmix64 finalizer over uint64."""
    z = np.asarray(x, dtype=np.uint64) + GOLDEN
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def bucket_of(keys: np.ndarray, seed: int, nbuckets: int) -> np.ndarray:
    """Bucket index in [0, nbuckets) for each 64-bit key."""
    return mix64(np.asarray(keys, dtype=np.uint64) ^ np.uint64(seed)) % np.uint64(nbuckets)


def fold_words(words: np.ndarray, seed: int) -> np.ndarray:
    """Hash an (n, w) word array down to one uint64 per row."""
    h = np.full(words.shape[0], np.uint64(seed), dtype=np.uint64)
    for c in range(words.shape[1]):
        h = mix64(h ^ words[:, c])
    return h
