"""A byte-stable container for a JSON header plus named arrays.

``np.savez`` stamps zip entries with the current time, so two identical
saves differ. Layout: magic ``NARR``, uint32 header length, UTF-8 JSON
header, then each array's little-endian bytes in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_MAGIC = b"NARR"


def save_arrays(path, meta: dict, **arrays) -> None:
    specs, blobs = [], []
    for name, a in arrays.items():
        a = np.ascontiguousarray(a)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        specs.append({"name": name, "dtype": dt.str, "shape": list(a.shape)})
        blobs.append(a.astype(dt, copy=False).tobytes())
    head = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_arrays(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an array container")
        (n,) = struct.unpack("<I", fh.read(4))
        head = json.loads(fh.read(n))
        out = {}
        for spec in head["arrays"]:
            dt = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"], dtype=np.int64))
            buf = fh.read(count * dt.itemsize)
            if len(buf) != count * dt.itemsize:
                raise ValueError(f"{path}: truncated array {spec['name']!r}")
            out[spec["name"]] = np.frombuffer(buf, dtype=dt).reshape(spec["shape"]).copy()
    return head["meta"], out
