"""Event-driven timing and energy model of the storage-side search engine.

Time is kept in integer picoseconds. Queries are handed to ``n_queues``
queues round-robin; a queue runs one query at a time. A query is a sequence
of stages (shared-module work, queue MAC work, or a batch of fetches with at
most ``max_outstanding`` in flight). A fetch reserves its core first come,
first served: it starts once the request has crossed the bus and the core
is free, holds the core for the read, and returns over the bus.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..search._engine import EV_INDEX, EV_PQ, EV_RAW, EV_SORT
from .config import SimConfig, SimError
from .trace import EV_ADT, AccessTrace

PQ_BITS = 256
CATEGORIES = ("compute", "sort", "nand", "bus", "core_wait", "stall")
_PRIO = {c: i for i, c in enumerate(CATEGORIES)}  # lower index wins

_FETCH, _MAC, _SHARED = 0, 1, 2


@dataclass
class SimReport:
    queries: int
    n_queues: int
    makespan_ns: float
    qps: float
    latency_mean_ns: float
    latency_p50_ns: float
    latency_p99_ns: float
    energy_per_query_nj: float
    core_utilization: float           # percent over all cores
    breakdown_ns: dict                # mean per query, sums to latency_mean_ns
    traffic_bytes: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    @property
    def access_share(self) -> float:
        """Fraction of query time spent on storage reads, bus transfers and
        waiting for a busy storage core."""
        b = self.breakdown_ns
        tot = sum(b.values())
        return (b["nand"] + b["bus"] + b["core_wait"]) / tot if tot else 0.0

    def row(self) -> dict:
        r = {k: getattr(self, k) for k in ("queries", "n_queues", "makespan_ns", "qps",
                                           "latency_mean_ns", "latency_p50_ns",
                                           "latency_p99_ns", "energy_per_query_nj",
                                           "core_utilization")}
        r.update({f"t_{k}_ns": v for k, v in self.breakdown_ns.items()})
        r.update({f"bytes_{k}": v for k, v in self.traffic_bytes.items()})
        return r


def _ps(ns: float) -> int:
    return int(round(ns * 1000))


class _Compiler:
    """Turns trace events into stages with physical cores and read times."""

    def __init__(self, plan, cfg: SimConfig, trace: AccessTrace):
        self.plan, self.cfg, self.trace = plan, cfg, trace
        self.read_ps = _ps(cfg.core_read_ns)
        self.gran_ps = _ps(cfg.granule_ns)
        self.cyc_ps = _ps(cfg.cycles_ns(1))
        self.idx_bits = plan.R * plan.b_index

    def _reads(self, region, ids, lo=0, hi=None):
        core, _, _, gran = self.plan.frame_span(region, ids, lo, hi)
        return (np.asarray(core, dtype=np.int64),
                self.read_ps + (np.asarray(gran, dtype=np.int64) - 1) * self.gran_ps,
                np.asarray(gran, dtype=np.int64))

    def compile(self, ev: np.ndarray):
        cfg, plan = self.cfg, self.plan
        n_ver = plan.N
        kinds, verts = ev[:, 0], ev[:, 1]
        bad = (kinds != EV_ADT) & (kinds != EV_SORT) & ((verts < 0) | (verts >= n_ver))
        if bad.any():
            raise SimError(f"trace vertex {int(verts[bad][0])} not in the layout")
        core = np.full(len(ev), -1, dtype=np.int64)
        rps = np.zeros(len(ev), dtype=np.int64)
        gran = np.zeros(len(ev), dtype=np.int64)
        hot = np.zeros(len(ev), dtype=bool)
        for kind, region, lo, hi in ((EV_PQ, "regular", self.idx_bits, self.idx_bits + PQ_BITS),
                                     (EV_RAW, "raw", 0, None)):
            m = kinds == kind
            if m.any():
                core[m], rps[m], gran[m] = self._reads(region, verts[m], lo, hi)
        m = kinds == EV_INDEX
        if m.any():
            h = m & (verts < plan.hot_count)
            r = m & ~h
            hot[h] = True
            if h.any():
                core[h], rps[h], gran[h] = self._reads("hot", verts[h])
            if r.any():
                core[r], rps[r], gran[r] = self._reads("regular", verts[r], 0, self.idx_bits)

        core, rps, gran, hot = core.tolist(), rps.tolist(), gran.tolist(), hot.tolist()
        kinds, aux = kinds.tolist(), ev[:, 2].tolist()
        M, D = self.trace.M, self.trace.D
        pq_cyc, raw_cyc = M * self.cyc_ps, D * self.cyc_ps
        stages = []
        i, n = 0, len(ev)
        while i < n:
            k = kinds[i]
            if k == EV_ADT:
                cyc = cfg.adt_cycles_per_dim[self.trace.metric] * D
                stages.append((_SHARED, "pq", cyc * self.cyc_ps))
                i += 1
            elif k == EV_INDEX:
                stages.append((_FETCH, [(core[i], rps[i], 0, gran[i])]))
                stages.append((_MAC, aux[i] * cfg.bloom_cycles * self.cyc_ps))
                in_hot = hot[i]
                i += 1
                reqs, local = [], 0
                while i < n and kinds[i] in (EV_PQ, EV_RAW):
                    cyc = pq_cyc if kinds[i] == EV_PQ else raw_cyc
                    if in_hot and kinds[i] == EV_PQ:
                        local += cyc
                    else:
                        reqs.append((core[i], rps[i], cyc, gran[i]))
                    i += 1
                if local:
                    stages.append((_MAC, local))
                if reqs:
                    stages.append((_FETCH, reqs))
                if i < n and kinds[i] == EV_SORT:
                    passes = max(1, math.ceil(aux[i] / cfg.sorter_width))
                    stages.append((_SHARED, "sort", passes * cfg.sort_cycles * self.cyc_ps))
                    i += 1
            elif k in (EV_PQ, EV_RAW):
                reqs = []
                while i < n and kinds[i] in (EV_PQ, EV_RAW):
                    cyc = pq_cyc if kinds[i] == EV_PQ else raw_cyc
                    reqs.append((core[i], rps[i], cyc, gran[i]))
                    i += 1
                stages.append((_FETCH, reqs))
            elif k == EV_SORT:
                passes = max(1, math.ceil(aux[i] / cfg.sorter_width))
                stages.append((_SHARED, "sort", passes * cfg.sort_cycles * self.cyc_ps))
                i += 1
            else:
                raise SimError(f"unknown trace event kind {k}")
        return stages


def _breakdown(t0: int, t1: int, iv: list) -> np.ndarray:
    """Split [t0, t1) among categories; overlapping time goes to the higher priority."""
    out = np.zeros(len(CATEGORIES), dtype=np.int64)
    if t1 <= t0:
        return out
    arr = np.array(iv, dtype=np.int64).reshape(-1, 3) if iv else np.empty((0, 3), np.int64)
    arr = arr[arr[:, 1] > arr[:, 0]]
    pts = np.unique(np.concatenate([[t0, t1], arr[:, 0], arr[:, 1]]))
    pts = pts[(pts >= t0) & (pts <= t1)]
    seg = np.diff(pts)
    owner = np.full(len(seg), _PRIO["stall"], dtype=np.int64)
    for p in range(len(CATEGORIES) - 1, -1, -1):
        sel = arr[arr[:, 2] == p]
        if not len(sel):
            continue
        cnt = np.zeros(len(pts) + 1, dtype=np.int64)
        np.add.at(cnt, np.searchsorted(pts, np.clip(sel[:, 0], t0, t1)), 1)
        np.add.at(cnt, np.searchsorted(pts, np.clip(sel[:, 1], t0, t1)), -1)
        cov = np.cumsum(cnt)[:len(seg)] > 0
        owner[cov] = p
    np.add.at(out, owner, seg)
    return out


def simulate(trace: AccessTrace, plan, config: SimConfig) -> SimReport:
    """Replay every query of ``trace`` on the modeled hardware."""
    cfg = config
    if len(trace) == 0:
        raise SimError("empty trace")
    comp = _Compiler(plan, cfg, trace)
    programs = [comp.compile(q) for q in trace.queries]
    bus = _ps(cfg.bus_ns)
    nq = cfg.n_queues
    window = cfg.max_outstanding

    core_free = np.zeros(cfg.n_cores, dtype=np.int64).tolist()
    core_busy = [0] * cfg.n_cores
    shared_free = {"pq": 0, "sort": 0}
    mac_free = [0] * nq
    backlog = [list(range(q, len(programs), nq)) for q in range(nq)]
    backlog = [b[::-1] for b in backlog]  # pop() from the end
    # per-queue live state
    cur = [-1] * nq
    stage_i = [0] * nq
    qstart = [0] * nq
    fetch_reqs = [None] * nq
    fetch_next = [0] * nq
    fetch_left = [0] * nq
    intervals = [[] for _ in range(nq)]

    latency = np.zeros(len(programs), dtype=np.int64)
    breakdown = np.zeros(len(CATEGORIES), dtype=np.int64)
    energy = {"nand": 0, "bus": 0, "mac": 0, "sort": 0, "pq": 0}
    heap = []
    seq = 0

    def push(t, q, kind, data=None):
        nonlocal seq
        heapq.heappush(heap, (t, q, seq, kind, data))
        seq += 1

    P_COMP, P_SORT, P_NAND, P_BUS, P_WAIT, P_STALL = (_PRIO[c] for c in CATEGORIES)

    def issue(q, t, req):
        c, rps, _, gran = req
        arrive = t + bus
        s = arrive if arrive > core_free[c] else core_free[c]
        e = s + rps
        core_free[c] = e
        core_busy[c] += rps
        iv = intervals[q]
        iv.append((t, arrive, P_BUS))
        if s > arrive:
            iv.append((arrive, s, P_WAIT))
        iv.append((s, e, P_NAND))
        iv.append((e, e + bus, P_BUS))
        energy["nand"] += gran
        energy["bus"] += gran
        push(e + bus, q, 1, req)

    def start_query(q, t):
        if not backlog[q]:
            cur[q] = -1
            return
        cur[q] = backlog[q].pop()
        stage_i[q] = 0
        qstart[q] = t
        intervals[q] = []
        push(t, q, 0)

    t_last = [0]

    def finish_query(q, t):
        t_last[0] = max(t_last[0], t)
        pid = cur[q]
        latency[pid] = t - qstart[q]
        breakdown[:] += _breakdown(qstart[q], t, [x for iv in intervals[q] for x in iv])
        start_query(q, t)

    for q in range(nq):
        start_query(q, 0)

    while heap:
        t, q, _, kind, req = heapq.heappop(heap)
        prog = programs[cur[q]]
        if kind == 1:  # a fetch returned: run its MAC work, refill the window
            cyc = req[2]
            if cyc:
                s = t if t > mac_free[q] else mac_free[q]
                mac_free[q] = s + cyc
                energy["mac"] += cyc
                intervals[q].append((s, s + cyc, P_COMP))
            reqs = fetch_reqs[q]
            if fetch_next[q] < len(reqs):
                issue(q, t, reqs[fetch_next[q]])
                fetch_next[q] += 1
            fetch_left[q] -= 1
            if fetch_left[q] == 0:
                stage_i[q] += 1
                push(max(t, mac_free[q]), q, 0)
            continue
        # kind 0: begin the next stage of the current query
        if stage_i[q] >= len(prog):
            finish_query(q, t)
            continue
        st = prog[stage_i[q]]
        if st[0] == _FETCH:
            reqs = st[1]
            fetch_reqs[q] = reqs
            fetch_left[q] = len(reqs)
            k = min(window, len(reqs))
            fetch_next[q] = k
            for j in range(k):
                issue(q, t, reqs[j])
        elif st[0] == _MAC:
            dur = st[1]
            s = t if t > mac_free[q] else mac_free[q]
            mac_free[q] = s + dur
            energy["mac"] += dur
            if dur:
                intervals[q].append((s, s + dur, P_COMP))
            stage_i[q] += 1
            push(s + dur, q, 0)
        else:
            res, dur = st[1], st[2]
            s = t if t > shared_free[res] else shared_free[res]
            shared_free[res] = s + dur
            energy[res] += dur
            if s > t:
                intervals[q].append((t, s, P_STALL))
            intervals[q].append((s, s + dur, P_SORT if res == "sort" else P_COMP))
            stage_i[q] += 1
            push(s + dur, q, 0)

    return _report(trace, plan, cfg, latency, breakdown, energy, core_busy, t_last[0])


def _report(trace, plan, cfg, latency, breakdown, energy, core_busy, t_end) -> SimReport:
    nqr = len(latency)
    span_ns = t_end / 1000.0
    lat_ns = latency / 1000.0
    mean = float(lat_ns.mean())
    bd = breakdown / 1000.0 / nqr
    cyc_ns = cfg.cycles_ns(1)
    dyn_pj = (energy["nand"] * cfg.nand_read_pj
              + energy["bus"] * (cfg.core_bus_pj + cfg.tile_bus_pj)
              + energy["mac"] / 1000.0 * cfg.mac_pj_per_cycle / cyc_ns
              + energy["sort"] / 1000.0 * cfg.sort_mw
              + energy["pq"] / 1000.0 * cfg.pq_module_mw)
    static_pj = (cfg.static_base_mw + cfg.static_per_queue_mw * cfg.n_queues) * span_ns
    util = 100.0 * sum(core_busy) / 1000.0 / (cfg.n_cores * span_ns) if span_ns > 0 else 0.0
    return SimReport(
        queries=nqr, n_queues=cfg.n_queues, makespan_ns=span_ns,
        qps=nqr / (span_ns * 1e-9) if span_ns > 0 else float("inf"),
        latency_mean_ns=mean, latency_p50_ns=float(np.percentile(lat_ns, 50)),
        latency_p99_ns=float(np.percentile(lat_ns, 99)),
        energy_per_query_nj=(dyn_pj + static_pj) / 1000.0 / nqr,
        core_utilization=min(100.0, util),
        breakdown_ns={c: float(v) for c, v in zip(CATEGORIES, bd)},
        traffic_bytes=traffic_breakdown(trace, plan),
        counts=trace.counts(),
    )


def traffic_breakdown(trace: AccessTrace, plan) -> dict:
    """Bytes moved per data type. A hot index fetch carries its neighbors'
    codes, so the PQ events of that hop move nothing extra."""
    idx_bits = pq_bits = raw_bits = 0
    for ev in trace.queries:
        kinds, verts = ev[:, 0], ev[:, 1]
        idx = kinds == EV_INDEX
        hot = idx & (verts < plan.hot_count)
        idx_bits += int((idx & ~hot).sum()) * plan.R * plan.b_index + int(hot.sum()) * plan.hot_bits
        pq = kinds == EV_PQ
        if hot.any():
            # PQ events that follow a hot index fetch in the same hop
            hop_id = np.cumsum(idx)
            hot_hop = np.zeros(hop_id.max() + 1, dtype=bool)
            hot_hop[hop_id[hot]] = True
            pq &= ~hot_hop[hop_id]
        pq_bits += int(pq.sum()) * PQ_BITS
        raw_bits += int((kinds == EV_RAW).sum()) * plan.raw_bits
    return {"index": idx_bits / 8, "pq": pq_bits / 8, "raw": raw_bits / 8,
            "total": (idx_bits + pq_bits + raw_bits) / 8}
