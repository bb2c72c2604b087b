"""Search parameters, results and the candidate-list helpers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SearchParams:
    L: int = 100
    k: int = 10
    T_step: int = 4
    r: int = 2
    beta: float = 1.0
    et_enabled: bool = True
    rerank_enabled: bool = True
    T_init: int | None = None  # defaults to k

    def __post_init__(self):
        t0 = self.T_init if self.T_init is not None else self.k
        if self.k < 1:
            raise SearchError("k must be >= 1")
        if self.k > self.L:
            raise SearchError(f"k={self.k} exceeds list size L={self.L}")
        if not self.k <= t0 <= self.L:
            raise SearchError(f"need k <= T_init <= L, got T_init={t0}")
        if self.T_step < 1:
            raise SearchError("T_step must be >= 1")
        if self.r < 1:
            raise SearchError("r must be >= 1")
        if not self.beta >= 1:
            raise SearchError("beta must be >= 1")

    @property
    def T_start(self) -> int:
        return self.T_init if self.T_init is not None else self.k

    def replace(self, **kw) -> "SearchParams":
        d = asdict(self)
        d.update(kw)
        return SearchParams(**d)


@dataclass
class SearchResult:
    ids: np.ndarray
    distances: np.ndarray
    pq_distance_count: int = 0
    exact_distance_count: int = 0
    hops: int = 0
    vertices_visited: int = 0
    terminated_early: bool = False
    final_T: int = 0
    events: np.ndarray | None = field(default=None, repr=False)  # (n, 3) kind, vertex, aux

    @property
    def distance_computations(self) -> int:
        return self.pq_distance_count + self.exact_distance_count

    def record(self) -> dict:
        return {
            "ids": self.ids.tolist(),
            "distances": [float(d) for d in self.distances],
            "pq_distance_count": self.pq_distance_count,
            "exact_distance_count": self.exact_distance_count,
            "hops": self.hops,
            "vertices_visited": self.vertices_visited,
            "terminated_early": self.terminated_early,
            "final_T": self.final_T,
        }


@dataclass
class CandidateList:
    """Bounded list of (distance, id) pairs kept sorted by distance then id."""

    capacity: int
    distances: np.ndarray = field(default_factory=lambda: np.empty(0, np.float32))
    ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    evaluated: np.ndarray = field(default_factory=lambda: np.empty(0, bool))
    reranked: np.ndarray = field(default_factory=lambda: np.empty(0, np.float32))  # nan = none
    T: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def insert(self, distances, ids) -> int:
        """Append new pairs, dropping ids already present. Returns how many were added."""
        ids = np.asarray(ids, dtype=np.int64)
        distances = np.asarray(distances, dtype=np.float32)
        _, first = np.unique(ids, return_index=True)
        keep = np.zeros(len(ids), bool)
        keep[first] = True
        keep &= ~np.isin(ids, self.ids)
        self.ids = np.concatenate([self.ids, ids[keep]])
        self.distances = np.concatenate([self.distances, distances[keep]])
        self.evaluated = np.concatenate([self.evaluated, np.zeros(keep.sum(), bool)])
        self.reranked = np.concatenate([self.reranked, np.full(keep.sum(), np.nan, np.float32)])
        return int(keep.sum())


def sort_and_truncate(cl: CandidateList) -> CandidateList:
    """Stable sort ascending by distance (ties by id), cut to capacity."""
    order = np.lexsort((cl.ids, cl.distances))[:cl.capacity]
    return CandidateList(cl.capacity, cl.distances[order], cl.ids[order], cl.evaluated[order],
                         cl.reranked[order], cl.T)


@dataclass
class TerminationState:
    """Reranked top-k id sets from successive rerank passes."""

    history: list = field(default_factory=list)

    def push(self, ids) -> None:
        self.history.append(tuple(sorted(int(i) for i in ids)))


def early_termination_check(state: TerminationState, r: int) -> bool:
    """True iff the last ``r`` transitions between rerank passes left the
    top-k id multiset unchanged."""
    if not state.history:
        raise SearchError("early termination check needs at least one rerank pass")
    h = state.history
    if len(h) < r + 1:
        return False
    return all(h[-1 - i] == h[-2 - i] for i in range(r))
