"""Product quantization: codebook training, encoding and table-lookup distances.

All metrics are kept in minimization form. For euclidean the table holds
squared partial distances; for inner product it holds negated partial dot
products; for angular (unit vectors) each entry is ``1/M - <q_i, c>`` so a
code's summed distance approximates ``1 - cos``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._kernels import min_update, nearest_center
from .dataset import METRICS, VectorDataset, check_metric, distances_to

_MODEL_MAGIC = b"NPQM"
_CODES_MAGIC = b"NPQC"
_VERSION = 1


class PQError(ValueError):
    pass


def split_dims(D: int, M: int) -> list[int]:
    """Subspace widths; the first ``D % M`` subspaces get one extra dimension."""
    if M < 1 or M > D:
        raise PQError(f"cannot split D={D} into M={M} subspaces")
    base, extra = divmod(D, M)
    return [base + 1 if i < extra else base for i in range(M)]


@dataclass(eq=False)
class PQModel:
    codebooks: list  # M arrays of shape (C, sub_dims[i]), float32
    metric: str = "euclidean"
    objective: list = field(default_factory=list, repr=False)  # mean squared error per iteration

    def __post_init__(self):
        check_metric(self.metric)
        self.codebooks = [np.ascontiguousarray(cb, dtype=np.float32) for cb in self.codebooks]
        cs = {cb.shape[0] for cb in self.codebooks}
        if len(cs) != 1:
            raise PQError("all subspaces must have the same number of centroids")
        if self.C > 256:
            raise PQError(f"C={self.C} does not fit one byte per code")
        if not all(np.isfinite(cb).all() for cb in self.codebooks):
            raise PQError("codebook contains non-finite values")
        self.offsets = np.concatenate([[0], np.cumsum(self.sub_dims)]).astype(np.int64)

    @property
    def M(self) -> int:
        return len(self.codebooks)

    @property
    def C(self) -> int:
        return self.codebooks[0].shape[0]

    @property
    def sub_dims(self) -> list[int]:
        return [cb.shape[1] for cb in self.codebooks]

    @property
    def D(self) -> int:
        return int(sum(self.sub_dims))

    @property
    def code_bits(self) -> int:
        return 8 * self.M

    def reconstruct(self, codes) -> np.ndarray:
        codes = np.atleast_2d(np.asarray(codes))
        return np.concatenate(
            [self.codebooks[i][codes[:, i]] for i in range(self.M)], axis=1
        ).astype(np.float32)

    def prepare(self, X) -> np.ndarray:
        """Map raw vectors into the space the codebooks were trained in."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float32))
        if X.shape[1] != self.D:
            raise PQError(f"dimension mismatch: model D={self.D}, data D={X.shape[1]}")
        if self.metric == "angular":
            from .dataset import normalize_rows
            return normalize_rows(X)
        return X

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MODEL_MAGIC)
            fh.write(struct.pack("<5i", _VERSION, self.M, self.C, self.D, METRICS.index(self.metric)))
            for cb in self.codebooks:
                fh.write(cb.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "PQModel":
        with open(path, "rb") as fh:
            if fh.read(4) != _MODEL_MAGIC:
                raise PQError(f"{path}: not a PQ model file")
            version, M, C, D, metric = struct.unpack("<5i", fh.read(20))
            if version != _VERSION:
                raise PQError(f"{path}: unsupported model version {version}")
            books = []
            for width in split_dims(D, M):
                buf = fh.read(4 * C * width)
                if len(buf) != 4 * C * width:
                    raise PQError(f"{path}: truncated codebook")
                books.append(np.frombuffer(buf, dtype="<f4").reshape(C, width))
        return cls(books, METRICS[metric])


def save_codes(path, codes: np.ndarray) -> None:
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(_CODES_MAGIC)
        fh.write(struct.pack("<2q", *codes.shape))
        fh.write(codes.tobytes())


def load_codes(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _CODES_MAGIC:
            raise PQError(f"{path}: not a PQ codes file")
        n, m = struct.unpack("<2q", fh.read(16))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != n * m:
        raise PQError(f"{path}: expected {n * m} code bytes, found {data.size}")
    return data.reshape(n, m).copy()


# ---------------------------------------------------------------------------
# k-means


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = ((X - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than centroids: duplicate existing ones
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        min_update(X, centers[j], closest)
    return centers


def kmeans(X: np.ndarray, k: int, iters: int, rng) -> tuple[np.ndarray, list]:
    """Lloyd's algorithm from a k-means++ start.

    An empty cluster is re-seeded with the point of the largest cluster that
    lies farthest from its centroid. Returns centroids and the mean squared
    error observed before each update plus the final one.
    """
    X = np.asarray(X, dtype=np.float64)
    centers = _kmeanspp(X, k, rng)
    history = []
    for _ in range(iters):
        assign, err = nearest_center(X, centers)
        history.append(float(err.mean()))
        counts = np.bincount(assign, minlength=k)
        sums = np.stack([np.bincount(assign, X[:, t], minlength=k) for t in range(X.shape[1])], 1)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            big = int(np.argmax(counts))
            members = np.flatnonzero(assign == big)
            far = members[np.argmax(((X[members] - centers[big]) ** 2).sum(1))]
            centers[j] = X[far]
            assign[far] = j
            counts[big] -= 1
            counts[j] = 1
    history.append(float(nearest_center(X, centers)[1].mean()))
    return centers, history


def train_pq(dataset: VectorDataset, M: int = 32, C: int = 256, iters: int = 25,
             seed: int = 0, max_train: int = 100_000) -> PQModel:
    """Train one k-means codebook per subspace on up to ``max_train`` sampled rows."""
    if C > 256 or C < 1:
        raise PQError(f"C must be in [1, 256], got {C}")
    if dataset.N < C:
        raise PQError(f"need at least C={C} training vectors, dataset has {dataset.N}")
    widths = split_dims(dataset.D, M)
    rng = np.random.default_rng(seed)
    X = dataset.search_vectors()
    if dataset.N > max_train:
        X = X[np.sort(rng.choice(dataset.N, max_train, replace=False))]
    books, curves = [], []
    start = 0
    for i, w in enumerate(widths):
        sub_rng = np.random.default_rng([seed, i])
        centers, hist = kmeans(X[:, start:start + w], C, iters, sub_rng)
        books.append(centers.astype(np.float32))
        curves.append(hist)
        start += w
    objective = np.sum(curves, axis=0).tolist()
    return PQModel(books, dataset.metric, objective)


# ---------------------------------------------------------------------------
# codes and tables


def encode(model: PQModel, data) -> np.ndarray:
    """Nearest-centroid index per subspace (ties to the smaller index)."""
    X = data.vectors if isinstance(data, VectorDataset) else data
    X = model.prepare(X)
    codes = np.empty((X.shape[0], model.M), dtype=np.uint8)
    for i, cb in enumerate(model.codebooks):
        lo, hi = model.offsets[i], model.offsets[i + 1]
        sub = np.ascontiguousarray(X[:, lo:hi], dtype=np.float64)
        codes[:, i] = nearest_center(sub, cb.astype(np.float64))[0]
    return codes


def build_adts(model: PQModel, Q, chunk: int = 256) -> np.ndarray:
    """Tables for a batch of queries, shape ``(nq, M, C)`` float32."""
    Q = model.prepare(Q).astype(np.float64)
    out = np.empty((Q.shape[0], model.M, model.C), dtype=np.float32)
    for i, cb in enumerate(model.codebooks):
        c64 = cb.astype(np.float64)
        lo, hi = model.offsets[i], model.offsets[i + 1]
        for s in range(0, Q.shape[0], chunk):
            qi = Q[s:s + chunk, lo:hi]
            if model.metric == "euclidean":
                diff = c64[None, :, :] - qi[:, None, :]
                out[s:s + chunk, i] = np.einsum("qcw,qcw->qc", diff, diff)
            elif model.metric == "inner_product":
                out[s:s + chunk, i] = -(qi @ c64.T)
            else:
                out[s:s + chunk, i] = 1.0 / model.M - (qi @ c64.T)
    return out


def build_adt(model: PQModel, q) -> np.ndarray:
    """Per-query ``M x C`` table of partial distances (float32)."""
    return build_adts(model, np.asarray(q).reshape(1, -1))[0]


def pq_distances(adt: np.ndarray, codes) -> np.ndarray:
    """Vectorized table-lookup distances for many codes.

    Terms are accumulated left to right (subspace 0 first) in float64, so a
    code always gets the same value whether scored alone or in a batch.
    """
    codes = np.atleast_2d(np.asarray(codes))
    M, C = adt.shape
    if codes.shape[1] != M:
        raise PQError(f"code length {codes.shape[1]} != M={M}")
    if codes.size and int(codes.max()) >= C:
        raise PQError(f"code entry {int(codes.max())} >= C={C}")
    flat = adt.ravel().astype(np.float64)
    terms = flat[codes.astype(np.intp) + (np.arange(M) * C)[None, :]]
    return np.cumsum(terms, axis=1)[:, -1].astype(np.float32)


def pq_distance(adt: np.ndarray, code) -> np.float32:
    return pq_distances(adt, np.asarray(code)[None, :])[0]


@dataclass
class BetaCalibration:
    beta: float
    percentile: float
    sample_size: int
    ratios: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.beta < 1:
            raise PQError("beta must be >= 1")


def distance_ratios(model: PQModel, dataset: VectorDataset, sample_size: int,
                    seed: int = 0, pairs_per_query: int = 64,
                    codes: np.ndarray | None = None) -> np.ndarray:
    """Exact / PQ distance ratios for (sampled base query, random base) pairs."""
    if sample_size > dataset.N:
        raise PQError(f"sample_size={sample_size} exceeds N={dataset.N}")
    rng = np.random.default_rng(seed)
    qids = rng.choice(dataset.N, sample_size, replace=False)
    ratios = []
    for qid in qids:
        others = rng.integers(0, dataset.N, pairs_per_query)
        others = others[others != qid]
        if not others.size:
            continue
        q = dataset.vectors[qid]
        adt = build_adt(model, q)
        oc = codes[others] if codes is not None else encode(model, dataset.vectors[others])
        approx = pq_distances(adt, oc).astype(np.float64)
        exact = distances_to(q, dataset.vectors[others], dataset.metric).astype(np.float64)
        ok = approx > 0
        ratios.append(exact[ok] / approx[ok])
    return np.concatenate(ratios) if ratios else np.empty(0)


def calibrate_beta(model: PQModel, dataset: VectorDataset, sample_size: int = 1000,
                   percentile: float = 0.99, seed: int = 0, pairs_per_query: int = 64,
                   codes: np.ndarray | None = None) -> BetaCalibration:
    """Pick beta as the given percentile of exact/PQ distance ratios, clamped to >= 1.

    Pairs whose PQ distance is not positive carry no ratio and are skipped.
    """
    if not 0 < percentile < 1:
        raise PQError("percentile must lie in (0, 1)")
    ratios = distance_ratios(model, dataset, sample_size, seed, pairs_per_query, codes)
    if ratios.size == 0:
        raise PQError("every sampled pair had a non-positive PQ distance")
    beta = max(1.0, float(np.quantile(ratios, percentile, method="inverted_cdf")))
    return BetaCalibration(beta, percentile, sample_size, ratios)
