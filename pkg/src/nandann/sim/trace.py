"""Per-query access traces replayed by the simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._io import load_arrays, save_arrays
from ..search._engine import EV_INDEX, EV_PQ, EV_RAW, EV_SORT

EV_ADT = 4
EVENT_NAMES = {EV_INDEX: "fetch_index", EV_PQ: "fetch_pq", EV_SORT: "sort", EV_RAW: "fetch_raw",
               EV_ADT: "adt_build"}


@dataclass
class AccessTrace:
    queries: list      # (n, 3) int64 arrays of (kind, vertex, aux), ids in layout order
    metric: str
    D: int
    M: int

    def __len__(self) -> int:
        return len(self.queries)

    @classmethod
    def from_results(cls, results, metric: str, D: int, M: int, adt: bool = True,
                     id_map: np.ndarray | None = None) -> "AccessTrace":
        """Wrap recorded search events; ``id_map`` relabels vertices (old -> new)."""
        qs = []
        for r in results:
            if r.events is None:
                raise ValueError("search results were not recorded")
            ev = r.events.copy()
            if id_map is not None:
                ev[:, 1] = id_map[ev[:, 1]]
            if adt:
                ev = np.vstack([np.array([[EV_ADT, -1, 0]], dtype=np.int64), ev])
            qs.append(ev)
        return cls(qs, metric, D, M)

    def counts(self) -> dict:
        allev = np.concatenate(self.queries) if self.queries else np.empty((0, 3), np.int64)
        return {name: int((allev[:, 0] == k).sum()) for k, name in EVENT_NAMES.items()}

    def save(self, path) -> None:
        lens = np.array([len(q) for q in self.queries], dtype=np.int64)
        allev = np.concatenate(self.queries) if self.queries else np.empty((0, 3), np.int64)
        save_arrays(path, {"metric": self.metric, "D": self.D, "M": self.M},
                    lengths=lens, events=allev.astype(np.int64))

    @classmethod
    def load(cls, path) -> "AccessTrace":
        meta, z = load_arrays(path)
        lens, allev = z["lengths"], z["events"]
        qs = np.split(allev, np.cumsum(lens)[:-1]) if len(lens) else []
        return cls(list(qs), meta["metric"], meta["D"], meta["M"])
