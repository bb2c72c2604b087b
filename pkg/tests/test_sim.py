import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nandann.graph import gap_encode
from nandann.graph.index import random_graph
from nandann.mapping import plan_layout
from nandann.search import EV_INDEX, EV_PQ, EV_RAW, SearchIndex, SearchParams, batch_search
from nandann.sim import CATEGORIES, AccessTrace, SimConfig, SimError, simulate, traffic_breakdown
from nandann.sim.errors import ErrorModel, flip_bits, inject_errors
from nandann.sim.sweeps import calibrate_outstanding, hot_node_sweep, queue_sweep

CFG = SimConfig()


def _plan(N=1000, R=8, b=16, hot=0, cfg=CFG, D=16):
    return plan_layout(random_graph(N, R, seed=0), hot, cfg, D=D, b_index=b)


def _trace(*queries, M=8, D=16):
    return AccessTrace([np.array(q, dtype=np.int64).reshape(-1, 3) for q in queries],
                       "euclidean", D, M)


@pytest.fixture(scope="module")
def real(small_index):
    ds, q, g, model, codes, truth = small_index
    idx = SearchIndex(g, model, codes, ds)
    res = batch_search(idx, q, SearchParams(L=30, k=10, beta=1.1), record=True)
    trace = AccessTrace.from_results(res.results, ds.metric, ds.D, model.M)
    plan = plan_layout(g, 10, CFG, ds.D)
    return trace, plan, g, ds


def test_bus_latency():
    assert CFG.bus_ns == 5 * 2.0 + 4 * 4.0


def test_single_pq_fetch_closed_form():
    plan = _plan()
    rep = simulate(_trace([EV_PQ, 0, 0]), plan, CFG)
    expect = CFG.bus_ns + CFG.core_read_ns + CFG.bus_ns + 8 * CFG.cycles_ns(1)
    assert rep.latency_mean_ns == pytest.approx(expect)
    assert rep.traffic_bytes["pq"] == 32
    assert sum(rep.breakdown_ns.values()) == pytest.approx(rep.latency_mean_ns)
    assert rep.breakdown_ns["nand"] == pytest.approx(CFG.core_read_ns)
    assert rep.breakdown_ns["bus"] == pytest.approx(2 * CFG.bus_ns)


def test_multi_granule_read():
    plan = _plan(R=64, b=24)
    rep = simulate(_trace([EV_INDEX, 0, 0]), plan, CFG)
    # 64 * 24 = 1536 index bits span two 1024-bit granules
    assert rep.latency_mean_ns == pytest.approx(2 * CFG.bus_ns + CFG.core_read_ns + CFG.granule_ns)


def test_same_core_conflict_serializes():
    plan = _plan()
    n_idx = plan.regions["regular"].n_cores
    assert plan.core_of("regular", 0) == plan.core_of("regular", n_idx)
    same = simulate(_trace([[EV_PQ, 0, 0], [EV_PQ, n_idx, 0]]), plan, CFG)
    apart = simulate(_trace([[EV_PQ, 0, 0], [EV_PQ, 1, 0]]), plan, CFG)
    assert same.latency_mean_ns >= 2 * CFG.core_read_ns
    assert apart.latency_mean_ns < 2 * CFG.core_read_ns
    # the first code's MAC overlaps the second read and is counted as compute
    b = same.breakdown_ns
    assert b["nand"] + b["compute"] == pytest.approx(2 * CFG.core_read_ns + 8)
    assert same.latency_mean_ns == pytest.approx(2 * CFG.bus_ns + 2 * CFG.core_read_ns + 8)


def test_index_width_shrinks_traffic():
    tr = _trace([[EV_INDEX, 3, 8], [EV_PQ, 4, 0], [EV_RAW, 4, 0]])
    a = traffic_breakdown(tr, _plan(b=24))
    b = traffic_breakdown(tr, _plan(b=32))
    assert a["index"] == pytest.approx(0.75 * b["index"])
    assert a["raw"] == b["raw"] == 4 * 16


def test_hot_hop_carries_codes():
    tr = _trace([[EV_INDEX, 0, 2], [EV_PQ, 5, 0], [EV_PQ, 6, 0], [EV_INDEX, 7, 1], [EV_PQ, 8, 0]])
    t = traffic_breakdown(tr, _plan(hot=1))
    plan = _plan(hot=1)
    assert t["pq"] == 32
    assert t["index"] == (plan.hot_bits + 8 * 16) / 8


def test_rejects_bad_traces():
    with pytest.raises(SimError):
        simulate(_trace(), _plan(), CFG)
    with pytest.raises(SimError):
        simulate(_trace([EV_PQ, 5000, 0]), _plan(), CFG)


def test_breakdown_and_determinism(real):
    trace, plan, g, ds = real
    a = simulate(trace, plan, CFG.replace(n_queues=8))
    b = simulate(trace, plan, CFG.replace(n_queues=8))
    assert a.row() == b.row()
    assert set(a.breakdown_ns) == set(CATEGORIES)
    assert sum(a.breakdown_ns.values()) == pytest.approx(a.latency_mean_ns, rel=1e-9)
    assert a.energy_per_query_nj > 0
    assert 0 < a.core_utilization <= 100
    assert a.counts["fetch_pq"] == sum(int((q[:, 0] == EV_PQ).sum()) for q in trace.queries)


def test_more_queues_more_throughput(real):
    trace, plan, g, ds = real
    qps = [r.qps for r in queue_sweep(trace, plan, CFG, sizes=(1, 4, 16, 64))]
    assert all(b >= a for a, b in zip(qps, qps[1:]))
    assert qps[-1] > 4 * qps[0]


def test_hot_sweep_cuts_index_hops(real):
    trace, plan, g, ds = real
    out = hot_node_sweep(g, trace, CFG.replace(n_queues=1), ds.D, percentages=(0.0, 0.05))
    assert [p for p, _ in out] == [0.0, 0.05]
    # hot hops skip the separate code fetches
    assert out[1][1].latency_mean_ns < out[0][1].latency_mean_ns


def test_calibration_picks_closest(real):
    trace, plan, g, ds = real
    w, rep = calibrate_outstanding(trace, plan, CFG, target_util=1.0, n_queues=8,
                                   candidates=(1, 4))
    utils = {c: simulate(trace, plan, CFG.replace(n_queues=8, max_outstanding=c)).core_utilization
             for c in (1, 4)}
    assert w == min(utils, key=lambda c: abs(utils[c] - 1.0))
    assert rep.core_utilization == utils[w]


def test_trace_roundtrip(real, tmp_path):
    trace = real[0]
    trace.save(tmp_path / "t.bin")
    back = AccessTrace.load(tmp_path / "t.bin")
    assert (back.metric, back.D, back.M) == (trace.metric, trace.D, trace.M)
    assert all(np.array_equal(a, b) for a, b in zip(trace.queries, back.queries))
    trace.save(tmp_path / "u.bin")
    assert (tmp_path / "t.bin").read_bytes() == (tmp_path / "u.bin").read_bytes()


def test_config_ini_roundtrip(tmp_path):
    cfg = SimConfig(n_queues=64, core_read_ns=250.0, adt_cycles_per_dim={"euclidean": 12,
                                                                        "angular": 4,
                                                                        "inner_product": 4})
    cfg.save(tmp_path / "hw.ini")
    assert SimConfig.load(tmp_path / "hw.ini") == cfg
    (tmp_path / "bad.ini").write_text("[sim]\nwarp_speed = 9\n")
    with pytest.raises(SimError):
        SimConfig.load(tmp_path / "bad.ini")
    with pytest.raises(SimError):
        SimConfig.load(tmp_path / "missing.ini")
    with pytest.raises(SimError):
        SimConfig(n_queues=0)


# bit errors


def test_zero_rate_is_identity(small_index):
    ds, q, g, model, codes, truth = small_index
    enc = gap_encode(g)
    c = inject_errors(codes, enc, ds, ErrorModel(0.0, seed=3))
    np.testing.assert_array_equal(c.codes, codes)
    np.testing.assert_array_equal(c.graph.neighbors, enc.decode().neighbors)
    np.testing.assert_array_equal(c.dataset.vectors, ds.vectors)
    assert c.flipped == {"pq": 0, "index": 0, "raw": 0}


def test_flip_rate_matches():
    buf = np.zeros(200_000, np.uint8)
    out, k = flip_bits(buf, 1e-3, np.random.default_rng(0))
    assert int(np.unpackbits(out).sum()) == k
    assert k == pytest.approx(1600, rel=0.1)


@given(st.floats(0, 0.05), st.floats(0, 0.05), st.integers(0, 100))
def test_nested_flips_are_subsets(a, b, seed):
    lo, hi = sorted((a, b))
    buf = np.random.default_rng(1).integers(0, 256, 4096, dtype=np.uint8)
    x, _ = flip_bits(buf, lo, np.random.default_rng(seed), ceiling=0.05)
    y, _ = flip_bits(buf, hi, np.random.default_rng(seed), ceiling=0.05)
    dx = np.unpackbits(x ^ buf).astype(bool)
    dy = np.unpackbits(y ^ buf).astype(bool)
    assert not np.any(dx & ~dy)


def test_scopes_are_independent(small_index):
    ds, q, g, model, codes, truth = small_index
    enc = gap_encode(g)
    both = inject_errors(codes, enc, ds, ErrorModel(1e-3, seed=2))
    pq_only = inject_errors(codes, enc, ds, ErrorModel(1e-3, seed=2, scope=("pq",)))
    np.testing.assert_array_equal(both.codes, pq_only.codes)
    np.testing.assert_array_equal(pq_only.dataset.vectors, ds.vectors)
    assert both.flipped["index"] > 0
    assert np.all(both.graph.neighbors < g.N)


def test_error_model_validation():
    with pytest.raises(ValueError):
        ErrorModel(1.5)
    with pytest.raises(ValueError):
        ErrorModel(0.1, ceiling=0.01)
    with pytest.raises(ValueError):
        ErrorModel(0.1, scope=("cache",))
