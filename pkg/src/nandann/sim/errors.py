"""Raw bit-error injection into the stored PQ codes, graph records and vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import VectorDataset
from ..graph.gapcode import GapEncodedGraph, decode_lenient
from ..graph.index import GraphIndex

SCOPES = ("pq", "index", "raw")


@dataclass(frozen=True)
class ErrorModel:
    """``ceiling`` (>= rber) makes flips nested: models sharing a seed and a
    ceiling flip a subset of each other's bits, the lower rate inside the higher."""

    rber: float
    seed: int = 0
    scope: tuple = SCOPES
    ceiling: float | None = None

    def __post_init__(self):
        if not 0 <= self.rber <= 1:
            raise ValueError("bit error rate must lie in [0, 1]")
        if self.ceiling is not None and not self.rber <= self.ceiling <= 1:
            raise ValueError("ceiling must lie in [rber, 1]")
        unknown = set(self.scope) - set(SCOPES)
        if unknown:
            raise ValueError(f"unknown error scope(s) {sorted(unknown)}")


def flip_bits(buf: np.ndarray, rber: float, rng: np.random.Generator,
              ceiling: float | None = None) -> tuple[np.ndarray, int]:
    """Copy of a byte buffer with every bit flipped independently with probability ``rber``.

    With a ``ceiling`` the candidates are drawn at that rate and each kept
    with probability ``rber / ceiling``; the draws do not depend on ``rber``.
    """
    out = np.array(buf, dtype=np.uint8, copy=True).reshape(-1)
    nbits = out.size * 8
    top = rber if ceiling is None else ceiling
    if rber <= 0 or nbits == 0:
        return out.reshape(np.shape(buf)), 0
    if top >= 1 and rber >= 1:
        return (~out).reshape(np.shape(buf)), nbits
    k = int(rng.binomial(nbits, top))
    pos = rng.choice(nbits, size=k, replace=False) if k else np.empty(0, np.int64)
    if ceiling is not None:
        pos = np.sort(pos)[rng.random(k) < rber / top]
        k = pos.size
    np.bitwise_xor.at(out, pos >> 3, (1 << (7 - (pos & 7))).astype(np.uint8))
    return out.reshape(np.shape(buf)), k


@dataclass
class CorruptedCopy:
    codes: np.ndarray
    graph: GraphIndex
    dataset: VectorDataset
    flipped: dict


def inject_errors(codes: np.ndarray, encoded: GapEncodedGraph, dataset: VectorDataset,
                  model: ErrorModel) -> CorruptedCopy:
    """Flip stored bits and decode what a reader would see.

    Each scope draws from its own seeded stream, so enabling one scope does
    not change the flips of another. Out-of-range neighbor ids are dropped.
    """
    streams = np.random.default_rng(model.seed).spawn(len(SCOPES))
    rng = dict(zip(SCOPES, streams))
    flipped = dict.fromkeys(SCOPES, 0)

    new_codes = np.array(codes, dtype=np.uint8, copy=True)
    if "pq" in model.scope:
        new_codes, flipped["pq"] = flip_bits(codes, model.rber, rng["pq"], model.ceiling)

    payload = encoded.payload
    if "index" in model.scope:
        payload, flipped["index"] = flip_bits(encoded.payload, model.rber, rng["index"], model.ceiling)
    if flipped["index"]:
        bad = GapEncodedGraph(encoded.N, encoded.R, encoded.bit_width, encoded.entry_point,
                              payload, encoded.sorted_input)
        deg, vals = bad.values()
        graph = decode_lenient(deg, vals, encoded.N, encoded.sorted_input, encoded.entry_point)
    else:
        graph = encoded.decode()

    vecs = dataset.vectors
    if "raw" in model.scope:
        raw, flipped["raw"] = flip_bits(dataset.vectors.view(np.uint8), model.rber, rng["raw"],
                                     model.ceiling)
        vecs = raw.view(np.float32).reshape(dataset.vectors.shape)
    ds = VectorDataset(vecs, dataset.metric, check_finite=False)
    return CorruptedCopy(new_codes, graph, ds, flipped)
