"""Visited-vertex filter: a Bloom filter with double hashing, or an exact set."""

from __future__ import annotations

import math

import numpy as np

from . import _engine as E

DEFAULT_BITS = 12 * 1024 * 8  # 12 kB
DEFAULT_HASHES = 8


class VisitedFilter:
    """``h`` bit positions per key from two seeded splitmix64 hashes."""

    def __init__(self, m: int = DEFAULT_BITS, h: int = DEFAULT_HASHES, seed: int = 0,
                 exact: bool = False):
        if m < 1 or h < 1:
            raise ValueError("m and h must be >= 1")
        self.m, self.h, self.seed, self.exact = int(m), int(h), int(seed), exact
        self.bits = np.zeros((self.m + 7) // 8, dtype=np.uint8)
        self._set: set = set()
        self.n = 0

    def insert(self, key: int) -> None:
        self.insert_many(np.array([key]))

    def query(self, key: int) -> bool:
        return bool(self.query_many(np.array([key]))[0])

    def insert_many(self, keys) -> None:
        keys = np.asarray(keys, dtype=np.int64)
        self.n += len(keys)
        if self.exact:
            self._set.update(keys.tolist())
        else:
            E.bloom_insert_many(self.bits, self.m, self.h, keys, self.seed)

    def query_many(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        if self.exact:
            return np.fromiter((k in self._set for k in keys.tolist()), bool, len(keys))
        return E.bloom_query_many(self.bits, self.m, self.h, keys, self.seed)

    def fill_ratio(self) -> float:
        return float(np.unpackbits(self.bits)[:self.m].mean())


def false_positive_rate(m: int, h: int, n: int) -> float:
    """Standard estimate ``(1 - exp(-h n / m)) ** h``."""
    return (1.0 - math.exp(-h * n / m)) ** h


def measure_false_positive_rate(m: int = DEFAULT_BITS, h: int = DEFAULT_HASHES, n: int = 8000,
                                probes: int = 1_000_000, seed: int = 0) -> float:
    """Insert ``n`` distinct random keys, probe ``probes`` keys never inserted."""
    rng = np.random.default_rng(seed)
    keys = np.unique(rng.integers(0, 2**40, n + probes + 1000, dtype=np.int64))
    keys = rng.permutation(keys)[:n + probes]
    f = VisitedFilter(m, h, seed=seed)
    f.insert_many(keys[:n])
    return float(f.query_many(keys[n:]).mean())
