"""Gap encoding of adjacency rows.

Each row is sorted ascending; the first id is kept as is and every later id
is replaced by its difference to the previous one. All values of the graph
share one bit width. A record is ``degree`` (``degree_bits``) followed by
``R`` values of ``bit_width`` bits, rows shorter than ``R`` are padded with
zeros, so every record has the same length and addresses are arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .index import GraphIndex

_CHUNK = 8192  # records per packing block; a multiple of 8 keeps blocks byte aligned


def bits_for(value: int) -> int:
    return max(1, int(value).bit_length())


def degree_bits(R: int) -> int:
    return bits_for(R)


@dataclass(eq=False)
class GapEncodedGraph:
    N: int
    R: int
    bit_width: int
    entry_point: int
    payload: np.ndarray  # packed uint8 stream, MSB first
    sorted_input: bool = True  # False for the plain 32-bit layout

    @property
    def degree_bits(self) -> int:
        return degree_bits(self.R)

    @property
    def record_bits(self) -> int:
        return self.degree_bits + self.R * self.bit_width

    @property
    def total_bits(self) -> int:
        return self.N * self.record_bits

    @property
    def offsets(self) -> np.ndarray:
        """Bit offset of every record, plus the end offset."""
        return np.arange(self.N + 1, dtype=np.int64) * self.record_bits

    def values(self) -> tuple[np.ndarray, np.ndarray]:
        """Unpack to ``(degrees, stored values)`` without undoing the deltas."""
        return unpack_records(self.payload, self.N, self.R, self.bit_width, self.degree_bits)

    def decode(self) -> GraphIndex:
        deg, vals = self.values()
        return _rows_from_values(deg, vals, self.sorted_input, self.entry_point)

    def neighbors(self, v: int) -> np.ndarray:
        """Decode a single record straight from its bit offset."""
        start = v * self.record_bits
        lo, hi = start // 8, -(-(start + self.record_bits) // 8)
        bits = np.unpackbits(self.payload[lo:hi])[start - 8 * lo:start - 8 * lo + self.record_bits]
        deg = int(_bits_to_int(bits[:self.degree_bits][None])[0])
        vals = _bits_to_int(bits[self.degree_bits:].reshape(self.R, self.bit_width))
        vals = vals[:deg].astype(np.int64)
        return np.cumsum(vals) if self.sorted_input else vals


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    w = bits.shape[-1]
    weights = (np.uint64(1) << np.arange(w - 1, -1, -1, dtype=np.uint64))
    return (bits.astype(np.uint64) * weights).sum(axis=-1)


def _int_to_bits(vals: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((vals.astype(np.uint64)[..., None] >> shifts) & np.uint64(1)).astype(np.uint8)


def pack_records(degrees: np.ndarray, values: np.ndarray, width: int, dbits: int) -> np.ndarray:
    n = len(degrees)
    parts = []
    for s in range(0, n, _CHUNK):
        d = _int_to_bits(degrees[s:s + _CHUNK], dbits)
        v = _int_to_bits(values[s:s + _CHUNK], width).reshape(len(d), -1)
        parts.append(np.packbits(np.concatenate([d, v], axis=1).ravel()))
    if not parts:
        return np.zeros(0, dtype=np.uint8)
    return np.concatenate(parts)


def unpack_records(payload, n, R, width, dbits):
    rec = dbits + R * width
    degs = np.empty(n, dtype=np.int64)
    vals = np.empty((n, R), dtype=np.int64)
    bits_per_chunk = _CHUNK * rec  # byte aligned because _CHUNK % 8 == 0
    for s in range(0, n, _CHUNK):
        m = min(_CHUNK, n - s)
        lo = (s // _CHUNK) * (bits_per_chunk // 8)
        nbytes = -(-(m * rec) // 8)
        bits = np.unpackbits(payload[lo:lo + nbytes])[:m * rec].reshape(m, rec)
        degs[s:s + m] = _bits_to_int(bits[:, :dbits])
        vals[s:s + m] = _bits_to_int(bits[:, dbits:].reshape(m, R, width))
    return degs, vals


def _sorted_rows(g: GraphIndex) -> np.ndarray:
    big = np.iinfo(np.int64).max
    live = np.arange(g.R)[None, :] < g.degrees[:, None]
    return np.sort(np.where(live, g.neighbors.astype(np.int64), big), axis=1), live


def gap_values(g: GraphIndex) -> np.ndarray:
    """``(N, R)`` stored values: first id absolute, then successive gaps, zero padded."""
    srt, live = _sorted_rows(g)
    vals = np.zeros_like(srt)
    vals[:, 0] = srt[:, 0]
    vals[:, 1:] = srt[:, 1:] - srt[:, :-1]
    return np.where(live, vals, 0)


def gap_bit_width(g: GraphIndex) -> int:
    vals = gap_values(g)
    return bits_for(int(vals.max())) if vals.size else 1


def gap_encode(g: GraphIndex) -> GapEncodedGraph:
    vals = gap_values(g)
    width = bits_for(int(vals.max())) if vals.size else 1
    payload = pack_records(g.degrees, vals, width, degree_bits(g.R))
    return GapEncodedGraph(g.N, g.R, width, g.entry_point, payload, True)


def plain_encode(g: GraphIndex, width: int = 32) -> GapEncodedGraph:
    """Uncompressed fixed-width layout (row order preserved)."""
    live = np.arange(g.R)[None, :] < g.degrees[:, None]
    vals = np.where(live, g.neighbors.astype(np.int64), 0)
    payload = pack_records(g.degrees, vals, width, degree_bits(g.R))
    return GapEncodedGraph(g.N, g.R, width, g.entry_point, payload, False)


def _rows_from_values(deg, vals, cumulative, entry_point):
    n, R = vals.shape
    live = np.arange(R)[None, :] < deg[:, None]
    ids = np.cumsum(vals, axis=1) if cumulative else vals
    nb = np.where(live, ids, -1).astype(np.int64)
    return GraphIndex(nb.astype(np.int32), deg.astype(np.int32), entry_point)


def gap_decode(enc: GapEncodedGraph) -> GraphIndex:
    return enc.decode()


def decode_lenient(deg: np.ndarray, vals: np.ndarray, N: int, cumulative: bool,
                   entry_point: int) -> GraphIndex:
    """Decode possibly corrupted records; ids outside ``[0, N)``, self loops and
    repeats are dropped and degrees clamped to ``R``."""
    n, R = vals.shape
    deg = np.minimum(np.asarray(deg, dtype=np.int64), R)
    ids = np.cumsum(vals, axis=1) if cumulative else np.asarray(vals, dtype=np.int64)
    big = np.iinfo(np.int64).max
    live = np.arange(R)[None, :] < deg[:, None]
    ok = live & (ids >= 0) & (ids < N) & (ids != np.arange(n)[:, None])
    srt = np.sort(np.where(ok, ids, big), axis=1)
    dup = np.zeros_like(ok)
    dup[:, 1:] = srt[:, 1:] == srt[:, :-1]
    srt = np.sort(np.where(dup, big, srt), axis=1)
    keep = srt != big
    out = np.where(keep, srt, -1).astype(np.int32)
    return GraphIndex(out, keep.sum(1).astype(np.int32), entry_point)


def graph_stats(g: GraphIndex) -> dict:
    """Degree histogram and raw vs gap-encoded index sizes (bits)."""
    enc = gap_encode(g)
    raw = 32 * g.N * g.R
    return {
        "N": g.N,
        "R": g.R,
        "degree_histogram": np.bincount(g.degrees, minlength=g.R + 1),
        "mean_degree": float(g.degrees.mean()),
        "raw_bits": raw,
        "encoded_bits": enc.total_bits,
        "bit_width": enc.bit_width,
        "compression": 1.0 - enc.total_bits / raw,
    }
