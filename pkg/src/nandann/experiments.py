"""Experiment building blocks shared by the command line and the acceptance tests.

Each function takes in-memory artifacts and returns plain rows (lists of
dicts) ready for CSV. Wall-clock columns are listed in ``TIMING_COLUMNS``;
everything else is a pure function of the inputs and seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .config import ExperimentConfig
from .dataset import (GroundTruth, VectorDataset, brute_force_knn, load_vectors, normalize_rows,
                      read_vecs, recall_at_k)
from .graph import GraphIndex, build_graph, gap_bit_width, gap_encode, plain_encode
from .mapping import (VisitTrace, collect_trace, permute_dataset, permute_rows, plan_layout,
                      reorder_graph, select_hot_nodes)
from .pq import PQModel, calibrate_beta, encode, train_pq
from .search import SearchIndex, SearchParams, batch_exact_search, batch_search
from .sim import AccessTrace, SimConfig, simulate, traffic_breakdown
from .sim.errors import ErrorModel, inject_errors
from .sim.sweeps import calibrate_outstanding
from .synthetic import make_dataset

TIMING_COLUMNS = ("qps", "latency_us")


def toy_paths():
    root = resources.files("nandann") / "data"
    return root / "toy_base.fvecs", root / "toy_query.fvecs"


def load_inputs(cfg: ExperimentConfig) -> tuple[VectorDataset, np.ndarray]:
    d = cfg.dataset
    if d.kind == "toy":
        base, queries = toy_paths()
        ds = load_vectors(base, metric=d.metric)
        q = read_vecs(queries).astype(np.float32)
    elif d.kind == "files":
        ds = load_vectors(d.base, metric=d.metric)
        q = read_vecs(d.queries).astype(np.float32)
    else:
        ds, q = make_dataset(d.kind, d.n_base, d.n_query, seed=cfg.seed)
    if ds.metric == "angular":
        q = normalize_rows(q)
    return ds, q[: d.n_query] if d.n_query else q


@dataclass
class Bundle:
    """Everything a search needs, plus the ground truth."""

    dataset: VectorDataset
    queries: np.ndarray
    truth: GroundTruth
    graph: GraphIndex
    model: PQModel
    codes: np.ndarray
    beta: float

    def index(self, visited: str = "bloom") -> SearchIndex:
        return SearchIndex(self.graph, self.model, self.codes, self.dataset, visited)


def build_bundle(cfg: ExperimentConfig) -> Bundle:
    """Run the build and encode stages in memory."""
    ds, q = load_inputs(cfg)
    truth = brute_force_knn(ds, q, cfg.dataset.k)
    g = build_graph(ds, cfg.graph.R, cfg.graph.L_build, cfg.graph.alpha, seed=cfg.seed)
    model, codes, beta = encode_stage(ds, cfg)
    return Bundle(ds, q, truth, g, model, codes, beta)


def encode_stage(ds: VectorDataset, cfg: ExperimentConfig):
    p = cfg.pq
    model = train_pq(ds, p.M, p.C, p.iters, seed=cfg.seed, max_train=p.max_train)
    codes = encode(model, ds)
    cal = calibrate_beta(model, ds, min(p.beta_sample, ds.N), p.beta_percentile,
                         seed=cfg.seed, codes=codes)
    return model, codes, cal.beta


def search_params(cfg: ExperimentConfig, beta: float, **over) -> SearchParams:
    s = cfg.search
    p = SearchParams(L=s.L, k=cfg.dataset.k, T_step=s.T_step, r=s.r,
                     beta=s.beta if s.beta > 0 else beta, et_enabled=s.et,
                     rerank_enabled=s.rerank)
    return p.replace(**over) if over else p


# ---------------------------------------------------------------------------
# software sweeps


def _row(batch, truth, k, **lead) -> dict:
    tot = batch.counter_totals()
    n = len(batch.results)
    return {
        **lead,
        f"recall@{k}": recall_at_k(batch.ids, truth.ids, k),
        "qps": batch.qps,
        "latency_us": batch.mean_latency * 1e6,
        "pq_count": tot["pq_distance_count"],
        "exact_count": tot["exact_distance_count"],
        "distance_computations": tot["pq_distance_count"] + tot["exact_distance_count"],
        "hops_per_query": tot["hops"] / n,
        "terminated_share": sum(r.terminated_early for r in batch.results) / n,
    }


def recall_qps_rows(index: SearchIndex, queries, truth: GroundTruth, params: SearchParams,
                    L_list, parallelism: int = 1, variant: str | None = None) -> list:
    rows = []
    index.search(queries[0], params)  # compile before timing
    for L in sorted(set(int(x) for x in L_list)):
        if L < params.k:
            continue
        p = params.replace(L=L, T_init=None)
        b = batch_search(index, queries, p, parallelism)
        lead = {"variant": variant} if variant else {}
        rows.append(_row(b, truth, params.k, **lead, L=L))
    return rows


def exact_rows(index: SearchIndex, queries, truth: GroundTruth, L_list, k: int) -> list:
    """All-exact best-first baseline over the same graph."""
    rows = []
    index.exact_search(queries[0], k, k)  # compile before timing
    for L in sorted(set(int(x) for x in L_list)):
        if L < k:
            continue
        b = batch_exact_search(index, queries, L, k)
        rows.append(_row(b, truth, k, variant="exact", L=L))
    return rows


def ablation_rows(index, queries, truth, params: SearchParams, L_list, parallelism=1) -> list:
    """The configured search next to ET off, plain top-T rerank and the exact baseline."""
    rows = recall_qps_rows(index, queries, truth, params, L_list, parallelism, "full")
    rows += recall_qps_rows(index, queries, truth, params.replace(et_enabled=False), L_list,
                            parallelism, "no_et")
    rows += recall_qps_rows(index, queries, truth, params.replace(rerank_enabled=False), L_list,
                            parallelism, "top_t_rerank")
    rows += exact_rows(index, queries, truth, L_list, params.k)
    return rows


def iso_recall_savings(on_rows: list, off_rows: list, k: int, tol: float = 0.002) -> list:
    """Pair each ET-off point with the cheapest ET-on point whose recall is no
    more than ``tol`` below it. Returns one dict per matched pair."""
    key = f"recall@{k}"
    out = []
    for off in off_rows:
        ok = [r for r in on_rows if r[key] >= off[key] - tol]
        if not ok:
            continue
        on = min(ok, key=lambda r: (r["distance_computations"], r["L"]))
        out.append({"L_off": off["L"], "L_on": on["L"], "recall_off": off[key],
                    "recall_on": on[key], "dc_off": off["distance_computations"],
                    "dc_on": on["distance_computations"],
                    "saving": 1 - on["distance_computations"] / off["distance_computations"]})
    return out


def beta_gain_rows(index, queries, truth, params: SearchParams, L_values) -> list:
    k = params.k
    rows = []
    for L in L_values:
        p = params.replace(L=int(L), T_init=None)
        with_beta = recall_at_k(batch_search(index, queries, p).ids, truth.ids, k)
        top_t = recall_at_k(batch_search(index, queries, p.replace(rerank_enabled=False)).ids,
                            truth.ids, k)
        rows.append({"L": int(L), "recall_beta": with_beta, "recall_top_t": top_t,
                     "gain": with_beta - top_t})
    return rows


def visited_filter_rows(bundle: Bundle, params: SearchParams) -> list:
    rows = []
    for kind in ("bloom", "exact"):
        b = batch_search(bundle.index(kind), bundle.queries, params)
        rows.append({"visited": kind,
                     f"recall@{params.k}": recall_at_k(b.ids, bundle.truth.ids, params.k)})
    return rows


# ---------------------------------------------------------------------------
# layout and simulation


@dataclass
class Reordered:
    """Frequency-reordered copy of a bundle's searchable data."""

    graph: GraphIndex
    dataset: VectorDataset
    codes: np.ndarray
    permutation: np.ndarray  # old id -> new id
    visits: VisitTrace

    def index(self, bundle: Bundle, visited: str = "bloom") -> SearchIndex:
        return SearchIndex(self.graph, bundle.model, self.codes, self.dataset, visited)


def reorder(bundle: Bundle, cfg: ExperimentConfig) -> Reordered:
    m = cfg.mapping
    params = search_params(cfg, bundle.beta, L=max(m.trace_L, cfg.dataset.k))
    visits = collect_trace(bundle.index(), m.trace_samples, params, seed=cfg.seed)
    g, perm = reorder_graph(bundle.graph, visits)
    return Reordered(g, permute_dataset(bundle.dataset, perm), permute_rows(bundle.codes, perm),
                     perm, visits)


def hot_count(N: int, p: float) -> int:
    return len(select_hot_nodes(N, p))


def sim_queries(bundle: Bundle, cfg: ExperimentConfig) -> np.ndarray:
    n = min(cfg.sim.trace_queries, len(bundle.queries))
    return bundle.queries[:n]


def record_trace(bundle: Bundle, ro: Reordered, cfg: ExperimentConfig) -> AccessTrace:
    s = cfg.sim
    params = search_params(cfg, bundle.beta, L=max(s.trace_L, cfg.dataset.k),
                           et_enabled=s.trace_et)
    b = batch_search(ro.index(bundle), sim_queries(bundle, cfg), params, record=True)
    return AccessTrace.from_results(b.results, bundle.dataset.metric, bundle.dataset.D,
                                    bundle.model.M)


def calibrated_config(trace: AccessTrace, plan, base: SimConfig, cfg: ExperimentConfig):
    """Base hardware config with the per-queue window fitted to the target
    utilization at 32 queues (unchanged when calibration is off)."""
    if cfg.sim.calibrate_util <= 0:
        return base, None
    w, rep = calibrate_outstanding(trace, plan, base, cfg.sim.calibrate_util, 32,
                                   cfg.sim.calibrate_windows)
    return base.replace(max_outstanding=w), rep


def queue_rows(trace, plan, config: SimConfig, sizes) -> list:
    rows = []
    for s in sizes:
        rep = simulate(trace, plan, config.replace(n_queues=int(s)))
        rows.append({"max_outstanding": config.max_outstanding, **rep.row()})
    return rows


def hot_rows(ro: Reordered, trace, config: SimConfig, D: int, percentages) -> list:
    b = gap_bit_width(ro.graph)
    rows, base = [], None
    for p in percentages:
        hc = hot_count(ro.graph.N, p)
        plan = plan_layout(ro.graph, hc, config, D, b)
        rep = simulate(trace, plan, config)
        base = base or rep.latency_mean_ns
        rows.append({"hot_fraction": float(p), "hot_count": hc,
                     "visit_coverage": ro.visits.coverage(np.argsort(ro.permutation)[:hc]),
                     "speedup": base / rep.latency_mean_ns, **rep.row()})
    return rows


def traffic_rows(bundle: Bundle, ro: Reordered, cfg: ExperimentConfig, config: SimConfig) -> list:
    """Bytes moved per query for the exact baseline and successive optimizations."""
    q = sim_queries(bundle, cfg)
    L, k = cfg.search.L, cfg.dataset.k
    truth = bundle.truth.ids[: len(q)]
    idx = ro.index(bundle)
    D, M = bundle.dataset.D, bundle.model.M
    b_gap = gap_bit_width(ro.graph)
    hc = hot_count(ro.graph.N, cfg.mapping.hot_fraction)
    params = search_params(cfg, bundle.beta, L=L)
    inv = np.argsort(ro.permutation)

    def row(name, batch, trace, b_index, hot):
        plan = plan_layout(ro.graph, hot, config, D, b_index)
        t = traffic_breakdown(trace, plan)
        ids = batch.ids
        found = np.where(ids < 0, -1, inv[np.maximum(ids, 0)])
        return {"system": name, "b_index": b_index, "hot_count": hot,
                f"recall@{k}": recall_at_k(found, truth, k),
                **{f"bytes_{c}_per_query": v / len(q) for c, v in t.items()}}

    rows = []
    ex = batch_exact_search(idx, q, L, k, record=True)
    tr = AccessTrace.from_results(ex.results, bundle.dataset.metric, D, M, adt=False)
    rows.append(row("exact_32b", ex, tr, 32, 0))
    for name, et, b, hot in (("pq_32b", False, 32, 0), ("pq_gap", False, b_gap, 0),
                             ("pq_gap_et", True, b_gap, 0), ("pq_gap_et_hot", True, b_gap, hc)):
        bt = batch_search(idx, q, params.replace(et_enabled=et), record=True)
        tr = AccessTrace.from_results(bt.results, bundle.dataset.metric, D, M)
        rows.append(row(name, bt, tr, b, hot))
    base = rows[0]["bytes_total_per_query"]
    for r in rows:
        r["reduction"] = base / r["bytes_total_per_query"]
    return rows


def bit_error_rows(bundle: Bundle, cfg: ExperimentConfig, params: SearchParams) -> list:
    """Recall after flipping stored bits at each rate. Flips are nested: a
    higher rate corrupts a superset of a lower rate's bits."""
    e = cfg.errors
    enc = gap_encode(bundle.graph)
    ceiling = max(e.rbers)
    k = params.k
    rows = []
    for rber in sorted(e.rbers):
        bad = inject_errors(bundle.codes, enc, bundle.dataset,
                            ErrorModel(float(rber), e.seed + cfg.seed, tuple(e.scope), ceiling))
        idx = SearchIndex(bad.graph, bundle.model, bad.codes, bad.dataset)
        b = batch_search(idx, bundle.queries, params)
        rows.append({"rber": float(rber), f"recall@{k}": recall_at_k(b.ids, bundle.truth.ids, k),
                     **{f"flipped_{s}": bad.flipped[s] for s in ("pq", "index", "raw")}})
    return rows


def compression_row(g: GraphIndex) -> dict:
    enc = gap_encode(g)
    plain = plain_encode(g, 32).total_bits
    return {"N": g.N, "R": g.R, "bit_width": enc.bit_width, "gap_bits": enc.total_bits,
            "plain_bits": plain, "compression": 1 - enc.total_bits / plain}
