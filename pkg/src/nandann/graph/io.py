"""Native graph files and the DiskANN in-memory index layout.

Native layout (little endian): magic ``NGRF``, then int32 version, N, R,
entry point, encoding flag (0 plain, 1 gap) and bit width, then an int64
offsets table of N + 1 record bit offsets, then the packed payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .gapcode import GapEncodedGraph, gap_encode, plain_encode
from .index import GraphError, GraphIndex

_MAGIC = b"NGRF"
_VERSION = 1
_HEADER = struct.Struct("<6i")


def save_graph(path, g: GraphIndex, encoding: str = "gap") -> None:
    enc = gap_encode(g) if encoding == "gap" else plain_encode(g)
    save_encoded(path, enc)


def save_encoded(path, enc: GapEncodedGraph) -> None:
    flag = 1 if enc.sorted_input else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(_VERSION, enc.N, enc.R, enc.entry_point, flag, enc.bit_width))
        fh.write(enc.offsets.astype("<i8").tobytes())
        fh.write(enc.payload.tobytes())


def load_encoded(path) -> GapEncodedGraph:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise GraphError(f"{path}: not a native graph file")
        version, n, R, entry, flag, width = _HEADER.unpack(fh.read(_HEADER.size))
        if version != _VERSION:
            raise GraphError(f"{path}: unsupported graph version {version}")
        offsets = np.frombuffer(fh.read(8 * (n + 1)), dtype="<i8")
        payload = np.frombuffer(fh.read(), dtype=np.uint8).copy()
    enc = GapEncodedGraph(n, R, width, entry, payload, bool(flag))
    if offsets.shape != (n + 1,) or not np.array_equal(offsets, enc.offsets):
        raise GraphError(f"{path}: offsets table does not match fixed-size records")
    if payload.size * 8 < enc.total_bits:
        raise GraphError(f"{path}: payload truncated")
    return enc


def load_graph(path, format: str = "native", R: int | None = None) -> GraphIndex:
    """Load and validate a graph. ``R`` caps the degree for DiskANN files."""
    if format == "native":
        enc = load_encoded(path)
        deg, vals = enc.values()
        if (deg > enc.R).any():
            v = int(np.flatnonzero(deg > enc.R)[0])
            raise GraphError(f"vertex {v}: degree {deg[v]} > R={enc.R}")
        g = enc.decode()
    elif format == "diskann_mem":
        g = _load_diskann(path, R)
    else:
        raise GraphError(f"unknown graph format {format!r}")
    return g.validate()


def _load_diskann(path, R):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size < 24:
        raise GraphError(f"{path}: truncated DiskANN header")
    _, max_deg, entry, _ = struct.unpack("<QIIQ", raw[:24].tobytes())
    words = raw[24:].view("<u4") if (raw.size - 24) % 4 == 0 else None
    if words is None:
        raise GraphError(f"{path}: payload is not a whole number of uint32 words")
    rows, pos = [], 0
    while pos < words.size:
        d = int(words[pos])
        row = words[pos + 1:pos + 1 + d]
        if row.size != d:
            raise GraphError(f"{path}: truncated adjacency row {len(rows)}")
        rows.append(row.astype(np.int64))
        pos += 1 + d
    cap = R if R is not None else max_deg
    for v, row in enumerate(rows):
        if len(row) > cap:
            raise GraphError(f"vertex {v}: degree {len(row)} > R={cap}")
        if len(row) and row.max() >= len(rows):
            raise GraphError(f"vertex {v}: neighbor id {int(row.max())} out of range [0, {len(rows)})")
    return GraphIndex.from_lists(rows, cap, int(entry), validate=False)


def save_diskann(path, g: GraphIndex) -> None:
    body = []
    for v in range(g.N):
        row = g.adjacency(v).astype("<u4")
        body.append(np.array([row.size], dtype="<u4"))
        body.append(row)
    payload = np.concatenate(body).tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QIIQ", 24 + len(payload), g.R, g.entry_point, 0))
        fh.write(payload)
