"""Query-time search over a graph with PQ-guided traversal."""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dataset import VectorDataset, normalize_rows
from ..graph.index import GraphIndex
from ..pq import PQModel, build_adts
from . import _engine as E
from .bloom import DEFAULT_BITS, DEFAULT_HASHES
from .types import SearchError, SearchParams, SearchResult

_METRIC_CODE = {"euclidean": E.METRIC_L2, "inner_product": E.METRIC_IP, "angular": E.METRIC_COS}


class _Scratch(threading.local):
    """Per-thread stamped arrays so a query never clears O(N) memory."""

    def get(self, n):
        if getattr(self, "n", None) != n:
            self.n = n
            self.mark = np.zeros(n, dtype=np.int64)
            self.ex_mark = np.zeros(n, dtype=np.int64)
            self.ex_val = np.zeros(n, dtype=np.float32)
            self.stamp = 0
        self.stamp += 1
        return self.mark, self.ex_mark, self.ex_val, self.stamp


@dataclass(eq=False)
class SearchIndex:
    """Everything a query needs, held read-only and shared across workers."""

    graph: GraphIndex
    model: PQModel
    codes: np.ndarray
    dataset: VectorDataset
    visited: str = "bloom"  # or "exact"
    bloom_bits: int = DEFAULT_BITS
    bloom_hashes: int = DEFAULT_HASHES
    bloom_seed: int = 0
    _scratch: _Scratch = field(default_factory=_Scratch, repr=False)

    def __post_init__(self):
        if self.graph.N == 0:
            raise SearchError("empty graph")
        if not (self.graph.N == self.codes.shape[0] == self.dataset.N):
            raise SearchError(f"size mismatch: graph {self.graph.N}, codes {self.codes.shape[0]}, "
                              f"dataset {self.dataset.N}")
        if self.model.metric != self.dataset.metric:
            raise SearchError("PQ model and dataset disagree on the metric")
        if self.visited not in ("bloom", "exact"):
            raise SearchError(f"unknown visited filter {self.visited!r}")
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        self.data = np.ascontiguousarray(self.dataset.search_vectors(), dtype=np.float32)
        self.metric_code = _METRIC_CODE[self.dataset.metric]

    def prepare_queries(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float32))
        if Q.shape[1] != self.dataset.D:
            raise SearchError(f"query dimension {Q.shape[1]} != {self.dataset.D}")
        return normalize_rows(Q) if self.dataset.metric == "angular" else Q

    def _run(self, q, adt, params: SearchParams, record: bool) -> SearchResult:
        mark, ex_mark, ex_val, stamp = self._scratch.get(self.graph.N)
        ids, d, c, ev = E.guided_search(
            self.graph.neighbors, self.graph.degrees, self.graph.entry_point, adt, self.codes,
            self.data, q, self.metric_code, params.k, params.L, params.T_start, params.T_step,
            params.r, float(params.beta), params.et_enabled, params.rerank_enabled,
            self.visited == "bloom", self.bloom_bits, self.bloom_hashes, self.bloom_seed,
            mark, stamp, ex_mark, ex_val, record)
        return SearchResult(ids, d, int(c[0]), int(c[1]), int(c[2]), int(c[3]), bool(c[4]),
                            int(c[5]), ev if record else None)

    def search(self, q, params: SearchParams, record: bool = False) -> SearchResult:
        q = self.prepare_queries(q)
        adt = build_adts(self.model, q)[0]
        return self._run(q[0], adt, params, record)

    def exact_search(self, q, L: int, k: int = 10, record: bool = False) -> SearchResult:
        """Baseline best-first traversal on exact distances only."""
        if k > L:
            raise SearchError(f"k={k} exceeds list size L={L}")
        q = self.prepare_queries(q)[0]
        mark, _, _, stamp = self._scratch.get(self.graph.N)
        ids, d, c, ev = E.exact_search(self.graph.neighbors, self.graph.degrees,
                                       self.graph.entry_point, self.data, q, self.metric_code,
                                       k, L, mark, stamp, record)
        return SearchResult(ids, d, int(c[0]), int(c[1]), int(c[2]), int(c[3]), False,
                            int(c[5]), ev if record else None)


def search(graph: GraphIndex, model: PQModel, codes, dataset: VectorDataset, q,
           params: SearchParams, visited: str = "bloom", record: bool = False) -> SearchResult:
    return SearchIndex(graph, model, codes, dataset, visited).search(q, params, record)


@dataclass
class BatchResult:
    results: list
    wall_seconds: float
    latencies: np.ndarray  # seconds per query

    @property
    def qps(self) -> float:
        return len(self.results) / self.wall_seconds if self.wall_seconds > 0 else float("inf")

    @property
    def mean_latency(self) -> float:
        return float(self.latencies.mean())

    @property
    def ids(self) -> np.ndarray:
        return np.stack([r.ids for r in self.results])

    def counter_totals(self) -> dict:
        keys = ("pq_distance_count", "exact_distance_count", "hops", "vertices_visited")
        return {k: int(sum(getattr(r, k) for r in self.results)) for k in keys}

    def write_jsonl(self, path, extra: dict | None = None) -> None:
        with open(path, "w") as fh:
            for i, r in enumerate(self.results):
                fh.write(json.dumps({"query": i, **r.record()}) + "\n")
            # wall-clock figures stay out so reruns are byte-identical
            agg = {"aggregate": True, "queries": len(self.results), **self.counter_totals(),
                   **(extra or {})}
            fh.write(json.dumps(agg) + "\n")


def batch_search(index: SearchIndex, queries, params: SearchParams, parallelism: int = 1,
                 record: bool = False) -> BatchResult:
    """Search every query; results do not depend on ``parallelism``."""
    Q = index.prepare_queries(queries)
    if Q.shape[0] < 1:
        raise SearchError("need at least one query")
    adts = build_adts(index.model, Q)
    lat = np.zeros(Q.shape[0])

    def one(i):
        t = time.perf_counter()
        res = index._run(Q[i], adts[i], params, record)
        lat[i] = time.perf_counter() - t
        return res

    t0 = time.perf_counter()
    if parallelism <= 1:
        results = [one(i) for i in range(Q.shape[0])]
    else:
        with ThreadPoolExecutor(parallelism) as pool:
            results = list(pool.map(one, range(Q.shape[0])))
    wall = time.perf_counter() - t0
    return BatchResult(results, wall, lat)


def batch_exact_search(index: SearchIndex, queries, L: int, k: int = 10,
                       record: bool = False) -> BatchResult:
    Q = np.atleast_2d(queries)
    lat = np.zeros(Q.shape[0])
    results = []
    t0 = time.perf_counter()
    for i in range(Q.shape[0]):
        t = time.perf_counter()
        results.append(index.exact_search(Q[i], L, k, record))
        lat[i] = time.perf_counter() - t
    return BatchResult(results, time.perf_counter() - t0, lat)
