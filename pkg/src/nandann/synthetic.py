"""Stand-in benchmark datasets for machines without the public corpora.

``sift_like`` builds real gradient-orientation descriptors (4x4 cells x 8
bins, clipped at 0.2, scaled to bytes) from synthetic image patches drawn
around a vocabulary of recurring structures. ``glove_like`` draws
anisotropic topic mixtures with a power-law spectrum for angular search.
Both are fully determined by their seed.
"""

from __future__ import annotations

import numpy as np

from .dataset import VectorDataset, brute_force_knn, normalize_rows

PATCH = 16


def _smooth_fields(rng, n, size, sigma):
    """White noise low-passed with a per-field Gaussian of width ``sigma``."""
    noise = rng.standard_normal((n, size, size))
    f = np.fft.fftfreq(size)
    r2 = f[:, None] ** 2 + f[None, :] ** 2
    kern = np.exp(-2.0 * (np.pi ** 2) * r2[None] * (sigma[:, None, None] ** 2))
    out = np.fft.ifft2(np.fft.fft2(noise) * kern).real
    out /= out.std(axis=(1, 2), keepdims=True) + 1e-12
    return out


def _edge_fields(rng, n, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) - (size - 1) / 2
    theta = rng.uniform(0, 2 * np.pi, n)
    offset = rng.normal(0, size / 6, n)
    width = rng.uniform(0.5, 3.0, n)
    proj = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    return np.tanh((proj - offset[:, None, None]) / width[:, None, None])


def _patches(rng, n, size):
    sigma = rng.uniform(1.0, 3.5, n)
    field = _smooth_fields(rng, n, size, sigma)
    edge_w = rng.uniform(0.0, 2.0, n) * (rng.random(n) < 0.6)
    return field + edge_w[:, None, None] * _edge_fields(rng, n, size)


def sift_descriptors(patches: np.ndarray) -> np.ndarray:
    """128-d orientation histograms of ``(n, 18, 18)`` patches, as uint8."""
    p = patches
    gx = p[:, 1:-1, 2:] - p[:, 1:-1, :-2]
    gy = p[:, 2:, 1:-1] - p[:, :-2, 1:-1]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi) * (8 / (2 * np.pi))
    c = (np.arange(PATCH) - (PATCH - 1) / 2) / (PATCH / 2)
    weight = np.exp(-(c[:, None] ** 2 + c[None, :] ** 2) / 2.0)
    mag = mag * weight[None]
    lo = np.floor(ang).astype(np.int64) % 8
    hi = (lo + 1) % 8
    frac = ang - np.floor(ang)
    n = p.shape[0]
    cell = (np.arange(PATCH) // 4)
    cell_idx = (cell[:, None] * 4 + cell[None, :])[None].repeat(n, 0)
    rows = np.arange(n)[:, None, None].repeat(PATCH, 1).repeat(PATCH, 2)
    hist = np.zeros((n, 16, 8))
    np.add.at(hist, (rows, cell_idx, lo), mag * (1 - frac))
    np.add.at(hist, (rows, cell_idx, hi), mag * frac)
    desc = hist.reshape(n, 128)
    desc /= np.linalg.norm(desc, axis=1, keepdims=True) + 1e-12
    desc = np.minimum(desc, 0.2)
    desc /= np.linalg.norm(desc, axis=1, keepdims=True) + 1e-12
    return np.clip(np.floor(desc * 512), 0, 255).astype(np.uint8)


def _sift_block(rng, n, prototypes, zipf):
    size = PATCH + 2
    pick = rng.choice(len(prototypes), size=n, p=zipf)
    strength = rng.uniform(0.25, 1.1, n)
    fresh = _patches(rng, n, size)
    shift = rng.integers(-1, 2, size=(n, 2))
    base = prototypes[pick]
    base = np.stack([np.roll(b, tuple(s), axis=(0, 1)) for b, s in zip(base, shift)])
    return sift_descriptors(base + strength[:, None, None] * fresh)


def sift_like(n_base: int, n_query: int, seed: int = 0, n_prototypes: int | None = None):
    """Return ``(base, queries)`` SIFT-style uint8-valued float32 matrices."""
    rng = np.random.default_rng(seed)
    n_prototypes = n_prototypes or max(64, n_base // 50)
    prototypes = _patches(rng, n_prototypes, PATCH + 2)
    zipf = 1.0 / np.arange(1, n_prototypes + 1) ** 0.6
    zipf /= zipf.sum()
    out = []
    for total in (n_base, n_query):
        chunks = []
        for start in range(0, total, 20000):
            chunks.append(_sift_block(rng, min(20000, total - start), prototypes, zipf))
        out.append(np.concatenate(chunks).astype(np.float32))
    return out[0], out[1]


def glove_like(n_base: int, n_query: int, dim: int = 100, seed: int = 0,
               n_topics: int | None = None, spectrum: float = 0.9, noise: float = 0.9):
    """Return ``(base, queries)`` for angular search with word-vector-like geometry."""
    rng = np.random.default_rng(seed)
    n_topics = n_topics or max(32, n_base // 200)
    scales = np.arange(1, dim + 1, dtype=np.float64) ** (-spectrum / 2)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    topics = (rng.standard_normal((n_topics, dim)) * scales) @ basis.T
    pop = 1.0 / np.arange(1, n_topics + 1) ** 0.8
    pop /= pop.sum()

    def draw(n):
        a = rng.choice(n_topics, size=n, p=pop)
        b = rng.choice(n_topics, size=n, p=pop)
        mix = rng.beta(2.0, 2.0, size=n)[:, None]
        center = mix * topics[a] + (1 - mix) * topics[b]
        jitter = (rng.standard_normal((n, dim)) * scales) @ basis.T
        x = center + noise * jitter
        # word-frequency-like norm spread; angular search ignores it
        x *= rng.lognormal(0.0, 0.3, size=(n, 1))
        return x.astype(np.float32)

    return draw(n_base), draw(n_query)


def local_intrinsic_dimension(base: np.ndarray, queries: np.ndarray, k: int = 100,
                              metric: str = "euclidean") -> float:
    """Mean maximum-likelihood LID estimate over ``queries`` from their k-NN distances."""
    ds = VectorDataset(base, metric)
    gt = brute_force_knn(ds, queries, k + 1)
    d = gt.distances.astype(np.float64)
    if metric == "euclidean":
        d = np.sqrt(np.maximum(d, 0))
    elif metric == "angular":
        d = np.sqrt(np.maximum(2 * d, 0))
    # drop exact self matches
    d = np.where(d[:, :1] <= 1e-9, d[:, 1:], d[:, :-1])
    w = d[:, -1:]
    ratio = np.log(np.maximum(d, 1e-12) / w)
    lid = -1.0 / ratio[:, :-1].mean(axis=1)
    return float(np.mean(lid))


def make_dataset(kind: str, n_base: int, n_query: int, seed: int = 0):
    """Named stand-in: ``"sift"`` (euclidean, 128-d) or ``"glove"`` (angular, 100-d)."""
    if kind == "sift":
        base, queries = sift_like(n_base, n_query, seed)
        return VectorDataset(base, "euclidean"), queries
    if kind == "glove":
        base, queries = glove_like(n_base, n_query, seed=seed)
        return VectorDataset(normalize_rows(base), "angular"), normalize_rows(queries)
    if kind == "gaussian":
        rng = np.random.default_rng(seed)
        base = rng.standard_normal((n_base, 32)).astype(np.float32)
        queries = rng.standard_normal((n_query, 32)).astype(np.float32)
        return VectorDataset(base, "euclidean"), queries
    raise ValueError(f"unknown synthetic dataset {kind!r}")
