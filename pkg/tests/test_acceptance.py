"""Acceptance criteria, one test per criterion.

The 100K-scale artifacts are produced by the command line into
``.cache/acceptance`` and reused on later runs (the manifest skips stages
whose inputs are unchanged). A cold run builds two 100K graphs first.
Criteria that the model cannot meet at this scale are marked ``xfail``
with ``strict=True``: they run in full and must fail.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nandann import experiments as X
from nandann.cli import Context, Manifest, main
from nandann.config import load_config
from nandann.dataset import VectorDataset, brute_force_knn, recall_at_k
from nandann.graph import (GraphIndex, build_graph, gap_bit_width, gap_encode, plain_encode,
                           random_graph)
from nandann.mapping import LayoutPlan
from nandann.pq import calibrate_beta, encode, train_pq
from nandann.search import (SearchIndex, SearchParams, batch_search, false_positive_rate,
                            measure_false_positive_rate)
from nandann.search.bloom import DEFAULT_BITS, DEFAULT_HASHES
from nandann.sim import AccessTrace

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / ".cache" / "acceptance"
NOTES = "see the decisions ledger"

slow = pytest.mark.slow


def pipeline(name: str, verbs) -> Context:
    cfg_path = ROOT / "configs" / f"{name}.ini"
    out = CACHE / name
    for verb in verbs:
        assert main([verb, "--config", str(cfg_path), "--out", str(out)]) == 0, verb
    cfg = load_config(cfg_path)
    return Context(cfg, out, Manifest(out))


@pytest.fixture(scope="module")
def sift():
    return pipeline("sift100k", ("build", "encode", "map", "simulate"))


@pytest.fixture(scope="module")
def glove():
    return pipeline("glove100k", ("build", "encode"))


def _params(ctx: Context, **over) -> SearchParams:
    return X.search_params(ctx.cfg, ctx.bundle().beta, **over)


# 1 -------------------------------------------------------------------------


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([8, 16, 32]))
def _full_list_is_exact(seed, D):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1000, D)).astype(np.float32)
    ds = VectorDataset(x)
    q = rng.normal(size=(20, D)).astype(np.float32)
    g = build_graph(ds, R=16, L_build=32, seed=seed % 1000)
    model = train_pq(ds, M=4, C=16, iters=4, seed=0)
    idx = SearchIndex(g, model, encode(model, ds), ds)
    p = SearchParams(L=ds.N, k=10, beta=1e30, et_enabled=False)
    found = batch_search(idx, q, p).ids
    assert recall_at_k(found, brute_force_knn(ds, q, 10).ids, 10) == 1.0


def test_criterion_01_exact_at_full_list(criterion):
    t = time.perf_counter()
    _full_list_is_exact()
    dt = time.perf_counter() - t
    criterion(1, dt < 10, f"recall@10 = 1.0 on 8 random 1K sets, {dt:.1f} s (< 10 s)")
    assert dt < 10


# 2 -------------------------------------------------------------------------


@slow
def test_criterion_02_beta_calibration(sift, criterion):
    b = sift.bundle()
    t = time.perf_counter()
    cal = calibrate_beta(b.model, b.dataset, 1000, 0.99, seed=sift.cfg.seed, codes=b.codes)
    dt = time.perf_counter() - t
    ok = 1.03 <= cal.beta <= 1.12 and dt < 300 and (b.model.M, b.model.C) == (32, 256)
    criterion(2, ok, f"beta = {cal.beta:.4f} in [1.03, 1.12], {dt:.1f} s")
    assert ok
    assert cal.beta == pytest.approx(b.beta)


# 3 -------------------------------------------------------------------------


@slow
def test_criterion_03_beta_rerank_gain(sift, criterion):
    b = sift.bundle()
    rows = X.beta_gain_rows(b.index(), b.queries, b.truth, _params(sift), (20, 50))
    low = min(rows, key=lambda r: r["recall_beta"])
    ok = all(r["gain"] > 0 for r in rows) and low["gain"] >= 0.01
    detail = ", ".join(f"L={r['L']}: {r['recall_top_t']:.4f} -> {r['recall_beta']:.4f} "
                       f"(+{100 * r['gain']:.2f}%)" for r in rows)
    criterion(3, ok, detail)
    assert ok


# 4 -------------------------------------------------------------------------


def _et_savings(ctx: Context):
    b = ctx.bundle()
    p = _params(ctx)
    idx = b.index()
    Ls = ctx.cfg.search.L_list
    on = X.recall_qps_rows(idx, b.queries, b.truth, p, Ls)
    off = X.recall_qps_rows(idx, b.queries, b.truth, p.replace(et_enabled=False), Ls)
    pairs = X.iso_recall_savings(on, off, p.k, tol=0.002)
    # the highest recall both settings reach is where termination is active
    return max(pairs, key=lambda s: (s["recall_off"], -s["L_off"])), pairs


@slow
def test_criterion_04_early_termination(sift, glove, criterion):
    out = {}
    for name, ctx in (("sift", sift), ("glove", glove)):
        out[name] = _et_savings(ctx)
    ok = all(best["saving"] >= 0.05 for best, _ in out.values())
    detail = "; ".join(
        f"{n}: recall {best['recall_off']:.4f} at L_off={best['L_off']} vs L_on={best['L_on']}, "
        f"{100 * best['saving']:.1f}% fewer distances" for n, (best, _) in out.items())
    criterion(4, ok, detail)
    assert ok


# 5 -------------------------------------------------------------------------


def uniform_graph(N: int, degrees: np.ndarray, R: int, seed: int = 0) -> GraphIndex:
    """Distinct uniformly random out-neighbors, ``degrees[v]`` of them per vertex."""
    rng = np.random.default_rng(seed)
    nb = np.empty((N, R), dtype=np.int32)
    for s in range(0, N, 65536):
        v = np.arange(s, min(N, s + 65536))[:, None]
        rows = rng.integers(0, N - 1, (len(v), R))
        rows += rows >= v
        while True:
            srt = np.sort(rows, axis=1)
            bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
            if not bad.any():
                break
            redo = rng.integers(0, N - 1, (int(bad.sum()), R))
            rows[bad] = redo + (redo >= v[bad])
        nb[s:s + len(v)] = rows
    nb[np.arange(R)[None, :] >= degrees[:, None]] = -1
    return GraphIndex(nb, degrees.astype(np.int32), 0)


def _sorted_rows(nb: np.ndarray) -> np.ndarray:
    return np.sort(np.where(nb < 0, np.iinfo(np.int32).max, nb), axis=1)


def _roundtrip(g: GraphIndex) -> bool:
    back = gap_encode(g).decode()
    return (np.array_equal(back.degrees, g.degrees)
            and np.array_equal(_sorted_rows(back.neighbors), _sorted_rows(g.neighbors)))


@pytest.fixture(scope="module")
def million(sift):
    """1M-vertex stand-in: degrees resampled from the built SIFT graph, ids
    uniform (the synthetic ids carry no locality, as in a fresh build)."""
    g = sift.bundle().graph
    deg = np.random.default_rng(1).choice(g.degrees, 1_000_000)
    big = uniform_graph(1_000_000, deg, g.R, seed=0)
    enc = gap_encode(big)
    picks = np.random.default_rng(0).choice(big.N, 2000, replace=False)
    exact = all(np.array_equal(enc.neighbors(int(v)), np.sort(big.adjacency(int(v))))
                for v in picks)
    return {"width": enc.bit_width, "exact": exact,
            "compression": 1 - enc.total_bits / plain_encode(big, 32).total_bits}


@pytest.fixture(scope="module")
def roundtrips(sift, glove):
    graphs = [sift.bundle().graph, glove.bundle().graph, sift.reordered().graph,
              random_graph(500, 12, seed=3), random_graph(50, 49, seed=4)]
    return [_roundtrip(g) for g in graphs]


@slow
@pytest.mark.xfail(strict=True, reason=f"without id locality the 1M width stays below 20 b; "
                                       f"{NOTES}")
def test_criterion_05_gap_encoding(roundtrips, million, criterion):
    w, c = million["width"], million["compression"]
    ok = all(roundtrips) and million["exact"] and c >= 0.15 and 20 <= w <= 26
    criterion(5, ok, f"round trip exact on {sum(roundtrips)}/{len(roundtrips)} graphs and 2000 "
                     f"sampled 1M records; 1M graph: width {w} b (needs 20-26), "
                     f"{100 * c:.1f}% smaller than 32-b ids (needs >= 15%)")
    assert ok


@slow
def test_gap_round_trip_and_compression(roundtrips, million):
    """The attainable part of criterion 5: exact round trips and >= 15% savings."""
    assert all(roundtrips) and million["exact"]
    assert million["compression"] >= 0.15


# 6 -------------------------------------------------------------------------


@slow
def test_criterion_06_traffic_reduction(sift, criterion):
    rows = {r["system"]: r for r in X.traffic_rows(sift.bundle(), sift.reordered(), sift.cfg,
                                                   sift.sim_config())}
    red = rows["pq_gap_et"]["reduction"]
    ok = red >= 1.5
    criterion(6, ok, f"exact {rows['exact_32b']['bytes_total_per_query'] / 1024:.1f} KiB/query "
                     f"vs gap+ET+PQ {rows['pq_gap_et']['bytes_total_per_query'] / 1024:.1f} "
                     f"KiB/query: {red:.2f}x lower")
    assert ok


# 7 -------------------------------------------------------------------------


def _sim_inputs(ctx: Context):
    return (AccessTrace.load(ctx.path("trace.bin")), LayoutPlan.load(ctx.path("layout.plan")),
            ctx.sim_config())


@slow
def test_criterion_07_queue_scaling(sift, criterion):
    trace, plan, config = _sim_inputs(sift)
    lo, hi = X.queue_rows(trace, plan, config, (32, 256))
    q_ratio = hi["qps"] / lo["qps"]
    u_ratio = hi["core_utilization"] / lo["core_utilization"]
    ok = q_ratio >= 3 and u_ratio >= 3
    criterion(7, ok, f"QPS x{q_ratio:.2f}, utilization {lo['core_utilization']:.1f}% -> "
                     f"{hi['core_utilization']:.1f}% (x{u_ratio:.2f}); window "
                     f"{config.max_outstanding}, {len(trace)} queries")
    assert ok


# 8 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def hot_rows(sift):
    trace, plan, config = _sim_inputs(sift)
    rows = X.hot_rows(sift.reordered(), trace, config, sift.bundle().dataset.D, (0.0, 0.03, 0.07))
    return {r["hot_fraction"]: r for r in rows}


@slow
@pytest.mark.xfail(strict=True, reason=f"hot-node speedup at 3% is far below 2x; {NOTES}")
def test_criterion_08_hot_nodes(hot_rows, criterion):
    s3 = hot_rows[0.03]["speedup"]
    marginal = hot_rows[0.07]["speedup"] / s3 - 1
    ok = s3 >= 2 and marginal < 0.10
    criterion(8, ok, f"3% hot: {s3:.2f}x lower latency (needs >= 2x); 3%->7% adds "
                     f"{100 * marginal:.1f}% (< 10%); 3% covers "
                     f"{100 * hot_rows[0.03]['visit_coverage']:.1f}% of visits")
    assert ok


@slow
def test_hot_nodes_plateau(hot_rows):
    """The attainable half of criterion 8: gains flatten beyond 3%."""
    assert hot_rows[0.03]["speedup"] > 1
    assert hot_rows[0.07]["speedup"] / hot_rows[0.03]["speedup"] - 1 < 0.10


# 9 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def error_rows(sift):
    cfg = replace(sift.cfg, errors=replace(sift.cfg.errors, rbers=(0.0, 1e-5, 1e-4)))
    return {r["rber"]: r for r in X.bit_error_rows(sift.bundle(), cfg, _params(sift))}


def _drop(rows, rber):
    return rows[0.0]["recall@10"] - rows[rber]["recall@10"]


@slow
@pytest.mark.xfail(strict=True, reason=f"flips in 32-b raw vectors cost more than 3% at 1e-4; "
                                       f"{NOTES}")
def test_criterion_09_bit_errors(error_rows, criterion):
    d5, d4 = _drop(error_rows, 1e-5), _drop(error_rows, 1e-4)
    ok = d5 < 0.01 and d4 < 0.03
    flips = {k[8:]: v for k, v in error_rows[1e-4].items() if k.startswith("flipped_")}
    criterion(9, ok, f"recall@10 {error_rows[0.0]['recall@10']:.4f}; drop {100 * d5:.2f}% at "
                     f"1e-5 (< 1%), {100 * d4:.2f}% at 1e-4 (< 3%); flips at 1e-4: {flips}")
    assert ok


@slow
def test_bit_errors_at_slc_rate(error_rows):
    """The attainable half of criterion 9."""
    assert _drop(error_rows, 1e-5) < 0.01
    assert _drop(error_rows, 1e-5) <= _drop(error_rows, 1e-4)


# 10 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def filter_recall(sift):
    return {r["visited"]: r["recall@10"] for r in X.visited_filter_rows(sift.bundle(),
                                                                        _params(sift))}


@slow
@pytest.mark.xfail(strict=True, reason=f"8000 keys in 12 kB with 8 hashes give ~0.27% false "
                                       f"positives by the standard estimate; {NOTES}")
def test_criterion_10_bloom_filter(filter_recall, criterion):
    assert DEFAULT_BITS == 12 * 1024 * 8 and DEFAULT_HASHES == 8
    fp = measure_false_positive_rate(DEFAULT_BITS, DEFAULT_HASHES, 8000, probes=1_000_000)
    theory = false_positive_rate(DEFAULT_BITS, DEFAULT_HASHES, 8000)
    delta = abs(filter_recall["bloom"] - filter_recall["exact"])
    ok = fp < 0.001 and delta < 0.005
    criterion(10, ok, f"false positives {100 * fp:.3f}% over 1e6 probes (needs < 0.1%, "
                      f"estimate {100 * theory:.3f}%); recall bloom {filter_recall['bloom']:.4f} "
                      f"vs exact set {filter_recall['exact']:.4f}")
    assert ok


@slow
def test_bloom_recall_matches_exact_set(filter_recall):
    """The attainable half of criterion 10."""
    assert abs(filter_recall["bloom"] - filter_recall["exact"]) < 0.005


# 11 ------------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path, artifact_snapshot, criterion):
    cfg = str(ROOT / "configs" / "smoke.ini")
    for run in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / run), "--seed", "7"]) == 0
    a, b = artifact_snapshot(tmp_path / "a"), artifact_snapshot(tmp_path / "b")
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differ
    criterion(11, ok, f"{len(a)} artifacts compared, {len(differ)} differ"
                      + (f": {', '.join(differ)}" if differ else ""))
    assert ok
