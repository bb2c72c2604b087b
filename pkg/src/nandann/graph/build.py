"""Desk-scale Vamana-style graph construction.

Two insertion passes over a seeded random order (alpha = 1, then the given
alpha), each vertex linked to an alpha-pruned subset of the vertices its
greedy search visited, with back edges re-pruned when they overflow R.
"""

from __future__ import annotations

import logging

import numpy as np

from .. import _kernels as K
from ..dataset import VectorDataset
from .index import GraphError, GraphIndex

log = logging.getLogger(__name__)


def medoid(X: np.ndarray) -> int:
    """Row closest to the mean (squared L2)."""
    center = X.astype(np.float64).mean(0)
    d = ((X.astype(np.float64) - center) ** 2).sum(1)
    return int(np.argmin(d))


def _build_space(dataset: VectorDataset) -> np.ndarray:
    # angular -> unit vectors under L2; inner product is built under plain L2
    return np.ascontiguousarray(dataset.search_vectors(), dtype=np.float32)


def build_graph(dataset: VectorDataset, R: int = 64, L_build: int = 150, alpha: float = 1.2,
                seed: int = 0, max_pool: int | None = None, slack: float = 1.3) -> GraphIndex:
    """Build a bounded-degree proximity graph whose entry point is the medoid."""
    n = dataset.N
    if n < 2:
        raise GraphError("need at least two vertices to build a graph")
    if R < 2:
        raise GraphError("R must be >= 2")
    X = _build_space(dataset)
    entry = medoid(X)
    if n - 1 <= R:
        rows = [[u for u in range(n) if u != v] for v in range(n)]
        return GraphIndex.from_lists(rows, R, entry)

    rng = np.random.default_rng(seed)
    width = int(np.ceil(slack * R))
    nbrs = np.full((n, width), -1, dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    init = max(1, min(R // 2, n - 1))
    for v in range(n):
        cand = rng.choice(n - 1, size=init, replace=False)
        cand[cand >= v] += 1
        nbrs[v, :init] = cand
        deg[v] = init
    max_pool = max_pool or max(2 * L_build, 2 * R)
    for a in (1.0, alpha):
        order = rng.permutation(n).astype(np.int64)
        K.vamana_pass(X, nbrs, deg, entry, order, L_build, a, R, max_pool)
    K.finalize_degrees(X, nbrs, deg, alpha, R)
    nbrs = np.ascontiguousarray(nbrs[:, :R])
    _repair_reachability(X, nbrs, deg, entry, L_build)
    g = GraphIndex(nbrs.astype(np.int32), deg.astype(np.int32), entry)
    return g.validate()


def _repair_reachability(X, nbrs, deg, entry, L, rounds: int = 8):
    """Link every vertex not reachable from ``entry`` from a nearby reachable one."""
    R = nbrs.shape[1]
    mark = np.zeros(X.shape[0], dtype=np.int64)
    stamp = 0
    for _ in range(rounds):
        seen = K.reachable(nbrs, deg, entry)
        missing = np.flatnonzero(~seen)
        if not missing.size:
            return
        log.info("linking %d unreachable vertices", missing.size)
        for u in missing:
            if seen[u]:
                continue
            stamp += 1
            cand, _, _, _ = K.greedy_search(X, nbrs, deg, entry, X[u], L, mark, stamp)
            hosts = [int(c) for c in cand if seen[c] and c != u]
            if not hosts:
                hosts = [entry]
            spare = [h for h in hosts if deg[h] < R]
            if spare:
                host = spare[0]
                nbrs[host, deg[host]] = u
                deg[host] += 1
            else:
                host = hosts[0]
                row = nbrs[host, :deg[host]]
                far = int(np.argmax(((X[row] - X[host]) ** 2).sum(1)))
                nbrs[host, far] = u
            seen |= K.reachable(nbrs, deg, u)
