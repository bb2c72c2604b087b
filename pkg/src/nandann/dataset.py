"""Benchmark vector files, exact distances, ground truth and recall.

The ``*vecs`` formats are the little-endian record formats of the texmex
corpus: every record is an int32 dimension followed by that many elements
(float32 for fvecs, uint8 for bvecs, int32 for ivecs).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

METRICS = ("euclidean", "angular", "inner_product")

_ELEM_DTYPE = {
    "fvecs": np.dtype("<f4"),
    "bvecs": np.dtype("u1"),
    "ivecs": np.dtype("<i4"),
}


class DatasetError(ValueError):
    """Malformed vector file or inconsistent dataset input."""


def check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise DatasetError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return metric


@dataclass(eq=False)
class VectorDataset:
    """An ``N x D`` float32 matrix with the metric it is searched under."""

    vectors: np.ndarray
    metric: str = "euclidean"
    check_finite: bool = field(default=True, repr=False)  # off only for fault-injected copies

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise DatasetError(f"dataset must be a non-empty 2-D matrix, got shape {vectors.shape}")
        if self.check_finite and not np.isfinite(vectors).all():
            raise DatasetError("dataset contains non-finite values")
        check_metric(self.metric)
        self.vectors = vectors

    @property
    def N(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.N

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        """Rows scaled to unit length (zero rows stay zero)."""
        return normalize_rows(self.vectors)

    def search_vectors(self) -> np.ndarray:
        """The representation distances are evaluated on for this metric."""
        return self.unit_vectors if self.metric == "angular" else self.vectors

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.N}x{self.D}:{self.metric}".encode())
        h.update(self.vectors.tobytes())
        return h.hexdigest()[:16]

    def subset(self, ids) -> "VectorDataset":
        return VectorDataset(self.vectors[np.asarray(ids)], self.metric)


@dataclass
class GroundTruth:
    """Exact top-k per query: ``ids`` and ``distances`` are ``(nq, k)``."""

    ids: np.ndarray
    distances: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    def __len__(self) -> int:
        return self.ids.shape[0]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    norms = np.linalg.norm(x.astype(np.float64), axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return (x / norms).astype(np.float32)


# ---------------------------------------------------------------------------
# file formats


def _format_of(path, fmt):
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".")
    if fmt not in _ELEM_DTYPE:
        raise DatasetError(f"unsupported vector format {fmt!r}")
    return fmt


def read_vecs(path, fmt: str | None = None) -> np.ndarray:
    """Read a ``*vecs`` file into an ``(N, D)`` array of its native element type."""
    fmt = _format_of(path, fmt)
    elem = _ELEM_DTYPE[fmt]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise DatasetError(f"{path}: empty file")
    if raw.size < 4:
        raise DatasetError(f"{path}: truncated record header")
    dim = int(raw[:4].view("<i4")[0])
    if dim < 1:
        raise DatasetError(f"{path}: invalid dimension {dim}")
    rec = 4 + dim * elem.itemsize
    if raw.size % rec:
        raise DatasetError(
            f"{path}: size {raw.size} is not a multiple of the record length {rec} (dim={dim})"
        )
    records = raw.reshape(-1, rec)
    dims = records[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != dim)
    if bad.size:
        raise DatasetError(
            f"{path}: record {bad[0]} declares dimension {dims[bad[0]]}, expected {dim}"
        )
    return records[:, 4:].copy().view(elem).reshape(-1, dim)


def load_vectors(path, fmt: str | None = None, metric: str = "euclidean") -> VectorDataset:
    """Load an fvecs/bvecs/ivecs file as a float32 dataset.

    bvecs bytes and ivecs integers are widened to float32 (exact for the
    byte range; ivecs values beyond 2**24 lose precision as any float32 would).
    """
    data = read_vecs(path, fmt)
    return VectorDataset(data.astype(np.float32), metric)


def write_vectors(path, data, fmt: str | None = None) -> None:
    fmt = _format_of(path, fmt)
    elem = _ELEM_DTYPE[fmt]
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1:
        raise DatasetError("write_vectors expects a non-empty 2-D array")
    if fmt == "bvecs" and (data.min() < 0 or data.max() > 255):
        raise DatasetError("bvecs values must lie in [0, 255]")
    n, d = data.shape
    out = np.empty((n, 4 + d * elem.itemsize), dtype=np.uint8)
    out[:, :4] = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    out[:, 4:] = np.ascontiguousarray(data.astype(elem)).view(np.uint8).reshape(n, -1)
    tmp = f"{path}.tmp"
    out.tofile(tmp)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# distances


def exact_distance(q, x, metric: str = "euclidean") -> np.float32:
    """Distance where smaller is closer for every metric.

    euclidean -> squared L2, angular -> 1 - cosine, inner_product -> -dot.
    """
    q = np.asarray(q, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if q.shape != x.shape or q.ndim != 1:
        raise DatasetError(f"dimension mismatch: {q.shape} vs {x.shape}")
    return distances_to(q, x[None, :], metric)[0]


def distances_to(q, X, metric: str = "euclidean") -> np.ndarray:
    """Distances from one query to every row of ``X`` (float32 result).

    Accumulates in float64 so that repeated evaluations of the same pair agree
    bit-for-bit with :func:`exact_distance`.
    """
    q = np.asarray(q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != q.shape[-1]:
        raise DatasetError(f"dimension mismatch: query {q.shape} vs rows {X.shape}")
    if metric == "euclidean":
        diff = X - q
        out = np.einsum("ij,ij->i", diff, diff)
    elif metric == "inner_product":
        out = -(X @ q)
    elif metric == "angular":
        qn = np.linalg.norm(q)
        xn = np.linalg.norm(X, axis=1)
        denom = qn * xn
        dots = X @ q
        cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        out = 1.0 - cos
    else:
        check_metric(metric)
    return out.astype(np.float32)


def _block_scores(Q, X, metric, x_sq):
    """Cheap ranking scores for a block of queries (monotone in the true distance)."""
    if metric == "euclidean":
        return x_sq[None, :] - 2.0 * (Q @ X.T)
    if metric == "angular":
        return -(normalize_rows(Q).astype(np.float64) @ X.T)
    return -(Q @ X.T)


def brute_force_knn(dataset: VectorDataset, queries, k: int, block: int = 256) -> GroundTruth:
    """Exhaustive top-k under the dataset metric; ties go to the smaller id.

    Candidates are shortlisted with a matrix-product score and then rescored
    with :func:`distances_to`, so reported distances match the search path
    exactly.
    """
    if k > dataset.N:
        raise DatasetError(f"k={k} exceeds dataset size {dataset.N}")
    if k < 1:
        raise DatasetError("k must be >= 1")
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != dataset.D:
        raise DatasetError(f"query dimension {Q.shape[1]} != dataset dimension {dataset.D}")
    X = dataset.search_vectors().astype(np.float64)
    x_sq = np.einsum("ij,ij->i", X, X)
    # shortlist margin absorbs the rounding of the expanded score
    short = min(dataset.N, k + max(8, k // 2))
    ids = np.empty((Q.shape[0], k), dtype=np.int64)
    dists = np.empty((Q.shape[0], k), dtype=np.float32)
    for start in range(0, Q.shape[0], block):
        Qb = Q[start:start + block]
        scores = _block_scores(Qb, X, dataset.metric, x_sq)
        if short < dataset.N:
            cand = np.argpartition(scores, short - 1, axis=1)[:, :short]
        else:
            cand = np.broadcast_to(np.arange(dataset.N), scores.shape)
        for row, q in enumerate(Qb):
            c = np.sort(cand[row])
            d = distances_to(q, dataset.vectors[c], dataset.metric)
            order = np.lexsort((c, d))[:k]
            ids[start + row] = c[order]
            dists[start + row] = d[order]
    return GroundTruth(ids, dists)


def recall_at_k(found, truth, k: int) -> float:
    """Mean over queries of ``|found[:k] & truth[:k]| / k``."""
    truth_ids = truth.ids if isinstance(truth, GroundTruth) else truth
    found = [np.asarray(f) for f in found]
    truth_ids = [np.asarray(t) for t in truth_ids]
    if len(found) != len(truth_ids):
        raise DatasetError(f"{len(found)} result lists for {len(truth_ids)} queries")
    if not found:
        raise DatasetError("no queries to score")
    hits = 0
    for f, t in zip(found, truth_ids):
        if len(f) < k or len(t) < k:
            raise DatasetError(f"need at least k={k} ids per query, got {len(f)} found / {len(t)} truth")
        hits += len(set(f[:k].tolist()) & set(t[:k].tolist()))
    return hits / (k * len(found))


def per_query_recall(found, truth, k: int) -> np.ndarray:
    truth_ids = truth.ids if isinstance(truth, GroundTruth) else truth
    return np.array(
        [len(set(np.asarray(f)[:k].tolist()) & set(np.asarray(t)[:k].tolist())) / k
         for f, t in zip(found, truth_ids)]
    )


def _array_hash(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


def cached_ground_truth(dataset: VectorDataset, queries, k: int, cache_dir) -> GroundTruth:
    """:func:`brute_force_knn` memoized on disk as an ivecs/fvecs pair.

    The cache key covers the base content, the queries, the metric and k.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float32))
    key = f"gt_{dataset.content_hash()}_{_array_hash(queries)}_{dataset.metric}_k{k}"
    ids_path = cache_dir / f"{key}.ivecs"
    dist_path = cache_dir / f"{key}.fvecs"
    if ids_path.exists() and dist_path.exists():
        return GroundTruth(read_vecs(ids_path).astype(np.int64), read_vecs(dist_path))
    gt = brute_force_knn(dataset, queries, k)
    write_vectors(ids_path, gt.ids.astype(np.int32))
    write_vectors(dist_path, gt.distances)
    return gt
