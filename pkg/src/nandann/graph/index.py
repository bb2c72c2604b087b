"""Bounded-degree proximity graph held as a padded ``N x R`` neighbor table."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(eq=False)
class GraphIndex:
    neighbors: np.ndarray  # (N, R) int32, rows padded with -1 after `degrees[v]`
    degrees: np.ndarray    # (N,) int32
    entry_point: int = 0

    def __post_init__(self):
        self.neighbors = np.ascontiguousarray(self.neighbors, dtype=np.int32)
        self.degrees = np.ascontiguousarray(self.degrees, dtype=np.int32)

    @property
    def N(self) -> int:
        return self.neighbors.shape[0]

    @property
    def R(self) -> int:
        return self.neighbors.shape[1]

    def adjacency(self, v: int) -> np.ndarray:
        return self.neighbors[v, :self.degrees[v]]

    def neighbor_sets(self) -> list[frozenset]:
        return [frozenset(self.adjacency(v).tolist()) for v in range(self.N)]

    @classmethod
    def from_lists(cls, lists, R: int | None = None, entry_point: int = 0,
                   validate: bool = True) -> "GraphIndex":
        lists = [list(map(int, row)) for row in lists]
        R = R if R is not None else max(1, max((len(r) for r in lists), default=1))
        n = len(lists)
        nb = np.full((n, R), -1, dtype=np.int32)
        deg = np.zeros(n, dtype=np.int32)
        for v, row in enumerate(lists):
            if len(row) > R:
                raise GraphError(f"vertex {v} has degree {len(row)} > R={R}")
            nb[v, :len(row)] = row
            deg[v] = len(row)
        g = cls(nb, deg, entry_point)
        if validate:
            g.validate()
        return g

    def validate(self) -> "GraphIndex":
        """Raise :class:`GraphError` unless every structural invariant holds."""
        n, R = self.neighbors.shape
        if n < 1:
            raise GraphError("graph has no vertices")
        if self.degrees.shape != (n,):
            raise GraphError("degree vector does not match the neighbor table")
        if (self.degrees < 0).any() or (self.degrees > R).any():
            v = int(np.flatnonzero((self.degrees < 0) | (self.degrees > R))[0])
            raise GraphError(f"vertex {v}: degree {self.degrees[v]} outside [0, R={R}]")
        if not 0 <= self.entry_point < n:
            raise GraphError(f"entry point {self.entry_point} out of range [0, {n})")
        live = np.arange(R)[None, :] < self.degrees[:, None]
        ids = self.neighbors
        bad = live & ((ids < 0) | (ids >= n))
        if bad.any():
            v, j = map(int, np.argwhere(bad)[0])
            raise GraphError(f"vertex {v}: neighbor id {ids[v, j]} out of range [0, {n})")
        selfloop = live & (ids == np.arange(n)[:, None])
        if selfloop.any():
            raise GraphError(f"vertex {int(np.argwhere(selfloop)[0][0])} links to itself")
        srt = np.sort(np.where(live, ids, -1), axis=1)
        dup = (srt[:, 1:] == srt[:, :-1]) & (srt[:, 1:] >= 0)
        if dup.any():
            raise GraphError(f"vertex {int(np.argwhere(dup)[0][0])} has duplicate neighbors")
        return self

    def reachable_fraction(self, start: int | None = None) -> float:
        start = self.entry_point if start is None else start
        seen = np.zeros(self.N, dtype=bool)
        seen[start] = True
        todo = deque([start])
        while todo:
            v = todo.popleft()
            for u in self.adjacency(v):
                if not seen[u]:
                    seen[u] = True
                    todo.append(u)
        return float(seen.mean())

    def permute(self, perm: np.ndarray) -> "GraphIndex":
        """Relabel vertices so old id ``v`` becomes ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int32)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.N, dtype=np.int32)
        old_rows = self.neighbors[inv]
        mapped = np.where(old_rows >= 0, perm[np.maximum(old_rows, 0)], -1)
        return GraphIndex(mapped, self.degrees[inv], int(perm[self.entry_point]))


def random_graph(N: int, R: int, seed: int = 0, degree: int | None = None) -> GraphIndex:
    """Uniformly random valid graph; handy for round-trip tests."""
    rng = np.random.default_rng(seed)
    degree = min(R, N - 1) if degree is None else degree
    rows = []
    for v in range(N):
        d = int(rng.integers(0, degree + 1))
        cand = rng.choice(N - 1, size=d, replace=False)
        cand[cand >= v] += 1
        rows.append(cand)
    return GraphIndex.from_lists(rows, R, entry_point=int(rng.integers(N)))
