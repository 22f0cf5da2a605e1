"""Counter-based random streams.

Every random draw in the package comes from a Philox4x64 generator whose key
is derived from a tuple of integers (for example ``(seed, epoch, sample)``).
The resulting stream is a pure function of that tuple, so results do not
depend on call order or worker count.
"""

from __future__ import annotations

import numpy as np

# Domain tags keep streams for different purposes independent even when the
# numeric parts of their keys coincide.
SHUFFLE = 1
AUGMENT = 2
DROPOUT = 3
INIT = 4
FOLDS = 5


def stream(*key: int) -> np.random.Generator:
    """Return a Philox generator keyed by a tuple of non-negative integers."""
    if not key:
        raise ValueError("stream key must contain at least one integer")
    words = [int(k) for k in key]
    if any(w < 0 for w in words):
        raise ValueError(f"stream key entries must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def fisher_yates(n: int, gen: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of ``range(n)`` via Fisher-Yates."""
    perm = np.arange(n, dtype=np.int64)
    if n < 2:
        return perm
    # j_i drawn uniformly from [0, i] for i = n-1 .. 1
    js = gen.integers(0, np.arange(n, 1, -1, dtype=np.int64))
    for i, j in zip(range(n - 1, 0, -1), js.tolist()):
        perm[i], perm[j] = perm[j], perm[i]
    return perm
