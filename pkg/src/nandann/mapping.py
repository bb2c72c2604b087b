"""Physical data layout: visit-frequency reordering, hot-node repetition and
round-robin placement of records onto storage cores."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import load_arrays, save_arrays
from .dataset import VectorDataset
from .graph.gapcode import gap_bit_width
from .graph.index import GraphIndex
from .search import EV_PQ, SearchIndex, SearchParams, batch_search
from .sim.config import SimConfig

PQ_BITS = 256
RAW_BITS = 32
REGIONS = ("regular", "hot", "raw")


class MappingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# visit statistics and reordering


@dataclass
class VisitTrace:
    counts: np.ndarray  # visits per vertex (touches: PQ distance evaluations)
    samples: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def coverage(self, vertices) -> float:
        """Share of all visits that land on ``vertices``."""
        t = self.total
        return float(self.counts[np.asarray(vertices, dtype=np.int64)].sum() / t) if t else 0.0


def collect_trace(index: SearchIndex, sample_count: int, params: SearchParams,
                  seed: int = 0) -> VisitTrace:
    """Search sampled base vectors and count how often each vertex is touched."""
    if sample_count < 1:
        raise MappingError("sample_count must be >= 1")
    n = index.dataset.N
    rng = np.random.default_rng(seed)
    ids = rng.choice(n, sample_count, replace=sample_count > n)
    res = batch_search(index, index.dataset.vectors[ids], params, record=True)
    counts = np.zeros(n, dtype=np.int64)
    for r in res.results:
        ev = r.events
        counts += np.bincount(ev[ev[:, 0] == EV_PQ, 1], minlength=n)
    return VisitTrace(counts, sample_count)


def frequency_order(counts: np.ndarray) -> np.ndarray:
    """Permutation old id -> new id, hottest first, ties by old id."""
    order = np.lexsort((np.arange(len(counts)), -np.asarray(counts)))
    perm = np.empty(len(counts), dtype=np.int64)
    perm[order] = np.arange(len(counts))
    return perm


def reorder_graph(g: GraphIndex, trace: VisitTrace) -> tuple[GraphIndex, np.ndarray]:
    if len(trace.counts) != g.N:
        raise MappingError(f"trace covers {len(trace.counts)} vertices, graph has {g.N}")
    perm = frequency_order(trace.counts)
    return g.permute(perm), perm


def permute_rows(a: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Row ``perm[v]`` of the result is row ``v`` of ``a``."""
    out = np.empty_like(a)
    out[perm] = a
    return out


def permute_dataset(ds: VectorDataset, perm: np.ndarray) -> VectorDataset:
    return VectorDataset(permute_rows(ds.vectors, perm), ds.metric, ds.check_finite)


def select_hot_nodes(trace_or_n, p: float) -> np.ndarray:
    """New ids ``[0, ceil(p N))`` of a frequency-reordered graph."""
    if not 0 <= p <= 1:
        raise MappingError("hot fraction must lie in [0, 1]")
    n = len(trace_or_n.counts) if isinstance(trace_or_n, VisitTrace) else int(trace_or_n)
    return np.arange(math.ceil(p * n - 1e-9), dtype=np.int64)


def mean_gap(g: GraphIndex, vertices) -> float:
    """Mean absolute difference between consecutive sorted neighbor ids."""
    gaps = []
    for v in np.asarray(vertices):
        row = np.sort(g.adjacency(int(v)).astype(np.int64))
        if len(row) > 1:
            gaps.append(np.diff(row))
    return float(np.concatenate(gaps).mean()) if gaps else 0.0


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class PhysicalAddress:
    tile: int
    core: int
    block: int
    page: int
    frame: int


@dataclass(frozen=True)
class Region:
    name: str
    count: int          # records stored
    record_bits: int
    first_core: int     # global core index of the first core used
    n_cores: int
    first_page: int     # page offset inside each core
    frames_per_page: int

    @property
    def pages(self) -> int:
        """Pages used per core."""
        if self.count == 0:
            return 0
        per_core = math.ceil(self.count / self.n_cores)
        return math.ceil(per_core / self.frames_per_page)


@dataclass
class LayoutPlan:
    N: int
    R: int
    D: int
    b_index: int
    hot_count: int
    config: SimConfig
    regions: dict = field(default_factory=dict)
    permutation: np.ndarray | None = None

    @property
    def regular_bits(self) -> int:
        return self.R * self.b_index + PQ_BITS

    @property
    def hot_bits(self) -> int:
        return self.R * (self.b_index + PQ_BITS) + PQ_BITS

    @property
    def raw_bits(self) -> int:
        return RAW_BITS * self.D

    def is_hot(self, v) -> np.ndarray | bool:
        return np.asarray(v) < self.hot_count

    def _locate(self, region: str, i):
        reg = self.regions[region]
        i = np.asarray(i, dtype=np.int64)
        if np.any((i < 0) | (i >= reg.count)):
            raise MappingError(f"id outside the {region} region [0, {reg.count})")
        core = reg.first_core + i % reg.n_cores
        slot = i // reg.n_cores
        page = reg.first_page + slot // reg.frames_per_page
        frame = slot % reg.frames_per_page
        return core, page, frame

    def core_of(self, region: str, ids) -> np.ndarray:
        return self._locate(region, ids)[0]

    def frame_span(self, region: str, ids, bit_lo: int = 0, bit_hi: int | None = None):
        """(core, page, first granule, granule count) of a bit range inside a frame."""
        reg = self.regions[region]
        core, page, frame = self._locate(region, ids)
        bit_hi = reg.record_bits if bit_hi is None else bit_hi
        start = frame * reg.record_bits + bit_lo
        end = frame * reg.record_bits + bit_hi
        gb = self.config.granule_bits
        g0 = start // gb
        return core, page, g0, (end - 1) // gb - g0 + 1

    def translate(self, v: int, region: str = "regular") -> PhysicalAddress:
        core, page, frame = (int(x) for x in self._locate(region, v))
        cfg = self.config
        return PhysicalAddress(core // cfg.cores_per_tile, core % cfg.cores_per_tile,
                               page // cfg.pages_per_block, page % cfg.pages_per_block, frame)

    def inverse(self, addr: PhysicalAddress) -> tuple[str, int]:
        """Region and id stored at ``addr``; raises for unallocated frames."""
        cfg = self.config
        core = addr.tile * cfg.cores_per_tile + addr.core
        page = addr.block * cfg.pages_per_block + addr.page
        for reg in self.regions.values():
            if reg.count == 0 or not reg.first_core <= core < reg.first_core + reg.n_cores:
                continue
            if not reg.first_page <= page < reg.first_page + reg.pages:
                continue
            if not 0 <= addr.frame < reg.frames_per_page:
                continue
            slot = (page - reg.first_page) * reg.frames_per_page + addr.frame
            i = slot * reg.n_cores + core - reg.first_core
            if i < reg.count:
                return reg.name, int(i)
        raise MappingError(f"no record stored at {addr}")

    def used_bits(self) -> int:
        return sum(r.count * r.record_bits for r in self.regions.values())

    # -- persistence ---------------------------------------------------------

    def header(self) -> dict:
        return {
            "N": self.N, "R": self.R, "D": self.D, "b_index": self.b_index,
            "hot_count": self.hot_count, "config": self.config.to_dict(),
            "regions": {k: asdict(v) for k, v in self.regions.items()},
        }

    def save(self, path) -> None:
        perm = self.permutation if self.permutation is not None else np.arange(self.N)
        save_arrays(path, self.header(), permutation=np.asarray(perm, dtype=np.int64))

    @classmethod
    def load(cls, path) -> "LayoutPlan":
        h, arrays = load_arrays(path)
        cfg = SimConfig(**h["config"])
        return cls(h["N"], h["R"], h["D"], h["b_index"], h["hot_count"], cfg,
                   {k: Region(**v) for k, v in h["regions"].items()}, arrays["permutation"])


def frames_per_page(record_bits: int, n_bl: int) -> int:
    f = n_bl // record_bits
    if f < 1:
        raise MappingError(f"a {record_bits}-bit record does not fit a {n_bl}-bit page")
    return f


def raw_core_count(n: int, D: int, config: SimConfig) -> int:
    """Cores holding raw vectors: enough for their volume, at least ``min_raw_cores``."""
    need = math.ceil(n * RAW_BITS * D / config.core_bits)
    return min(config.n_cores - 1, max(need, config.min_raw_cores))


def plan_layout(g: GraphIndex, hot_count: int, config: SimConfig, D: int,
                b_index: int | None = None, permutation=None) -> LayoutPlan:
    """Lay out regular, hot and raw regions with core-level round-robin placement.

    Index cores hold the regular region (every vertex) followed by the hot
    region (copies of vertices ``[0, hot_count)``); raw vectors live on
    dedicated cores after them.
    """
    n = g.N
    if not 0 <= hot_count <= n:
        raise MappingError("hot_count outside [0, N]")
    b = gap_bit_width(g) if b_index is None else int(b_index)
    plan = LayoutPlan(n, g.R, D, b, int(hot_count), config, permutation=permutation)
    n_raw = raw_core_count(n, D, config)
    n_idx = config.n_cores - n_raw
    reg = Region("regular", n, plan.regular_bits, 0, n_idx, 0,
                 frames_per_page(plan.regular_bits, config.n_bl))
    hot = Region("hot", int(hot_count), plan.hot_bits, 0, n_idx, reg.pages,
                 frames_per_page(plan.hot_bits, config.n_bl))
    raw = Region("raw", n, plan.raw_bits, n_idx, n_raw, 0,
                 frames_per_page(plan.raw_bits, config.n_bl))
    plan.regions = {"regular": reg, "hot": hot, "raw": raw}
    if reg.pages + hot.pages > config.pages_per_core or raw.pages > config.pages_per_core:
        raise MappingError("layout exceeds the configured capacity")
    return plan
