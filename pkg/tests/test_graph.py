import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nandann.dataset import VectorDataset, brute_force_knn, recall_at_k
from nandann.graph import (GraphError, GraphIndex, build_graph, gap_bit_width, gap_decode,
                           gap_encode, gap_values, graph_stats, load_encoded, load_graph,
                           plain_encode, random_graph, save_diskann, save_encoded, save_graph)
from nandann.graph.gapcode import decode_lenient
from nandann.search import SearchIndex
from nandann.pq import encode, train_pq
from nandann.synthetic import make_dataset


@pytest.fixture(scope="module")
def sift10k():
    ds, q = make_dataset("sift", 10_000, 100, seed=3)
    return ds, q, build_graph(ds, R=32, L_build=64, seed=0)


def test_three_points_form_complete_graph():
    ds = VectorDataset(np.array([[0, 0], [1, 0], [0, 1]], np.float32))
    g = build_graph(ds, R=2, L_build=4)
    assert g.neighbor_sets() == [frozenset({1, 2}), frozenset({0, 2}), frozenset({0, 1})]


def test_built_graph_is_valid_and_reachable(sift10k):
    ds, _, g = sift10k
    g.validate()
    assert g.degrees.max() <= 32
    assert g.reachable_fraction() >= 0.999


def test_built_graph_supports_high_recall(sift10k):
    ds, q, g = sift10k
    model = train_pq(ds, M=16, C=16, iters=2, seed=0)
    idx = SearchIndex(g, model, encode(model, ds), ds)
    found = [idx.exact_search(x, L=200, k=10).ids for x in q]
    assert recall_at_k(found, brute_force_knn(ds, q, 10), 10) >= 0.95


def test_build_is_deterministic():
    ds, _ = make_dataset("gaussian", 800, 1, seed=0)
    a = build_graph(ds, R=12, L_build=24, seed=4)
    b = build_graph(ds, R=12, L_build=24, seed=4)
    assert np.array_equal(a.neighbors, b.neighbors) and a.entry_point == b.entry_point


def test_native_roundtrip(tmp_path):
    g = random_graph(300, 16, seed=1)
    save_graph(tmp_path / "g.ngr", g)
    back = load_graph(tmp_path / "g.ngr")
    assert back.neighbor_sets() == g.neighbor_sets()
    assert back.entry_point == g.entry_point


def test_built_graph_roundtrip_keeps_neighbor_sets(tmp_path, sift10k):
    g = sift10k[2]
    save_graph(tmp_path / "g.ngr", g)
    assert load_graph(tmp_path / "g.ngr").neighbor_sets() == g.neighbor_sets()


def test_diskann_roundtrip(tmp_path):
    g = random_graph(100, 8, seed=2)
    save_diskann(tmp_path / "g.index", g)
    back = load_graph(tmp_path / "g.index", "diskann_mem")
    assert back.neighbor_sets() == g.neighbor_sets() and back.entry_point == g.entry_point


def test_out_of_range_id_is_a_structured_error(tmp_path):
    g = random_graph(20, 4, seed=3, degree=2)
    nb = g.neighbors.copy()
    nb[5, 0] = g.N + 5
    save_graph(tmp_path / "bad.ngr", GraphIndex(nb, np.maximum(g.degrees, 1), 0), "plain")
    with pytest.raises(GraphError, match="out of range"):
        load_graph(tmp_path / "bad.ngr")


@pytest.mark.parametrize("rows,msg", [([[0]], "itself"), ([[1, 1], [0]], "duplicate"),
                                      ([[-1], [0]], "out of range")])
def test_validation_errors(rows, msg):
    with pytest.raises(GraphError, match=msg):
        GraphIndex.from_lists(rows)


def test_worked_gap_example():
    g = GraphIndex.from_lists([[9, 2, 5]] + [[0]] * 9, R=3)
    assert gap_values(g)[0].tolist() == [2, 3, 4]
    assert gap_encode(g).neighbors(0).tolist() == [2, 5, 9]


def test_small_graph_shrinks_below_32_bit_ids():
    g = GraphIndex.from_lists([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], R=3)
    enc = gap_encode(g)
    assert 4 * 3 * 32 == 384
    assert enc.total_bits < 384
    assert gap_decode(enc).neighbor_sets() == g.neighbor_sets()


@given(st.integers(2, 60), st.integers(1, 9), st.integers(0, 10_000))
def test_gap_roundtrip_random_graphs(n, R, seed):
    g = random_graph(n, R, seed=seed)
    enc = gap_encode(g)
    back = enc.decode()
    assert back.neighbor_sets() == g.neighbor_sets()
    assert np.array_equal(back.degrees, g.degrees)
    for v in range(0, n, 7):
        assert enc.neighbors(v).tolist() == sorted(g.adjacency(v).tolist())


def test_gap_roundtrip_through_file(tmp_path, sift10k):
    enc = gap_encode(sift10k[2])
    save_encoded(tmp_path / "g.ngr", enc)
    back = load_encoded(tmp_path / "g.ngr")
    assert np.array_equal(back.payload, enc.payload) and back.bit_width == enc.bit_width
    assert back.decode().neighbor_sets() == sift10k[2].neighbor_sets()


def test_width_is_that_of_the_largest_stored_value():
    g = random_graph(500, 10, seed=5)
    assert gap_bit_width(g) == int(gap_values(g).max()).bit_length()


def test_stats_on_complete_graph():
    g = GraphIndex.from_lists([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], R=3)
    s = graph_stats(g)
    assert np.all(g.degrees == 3)
    assert s["degree_histogram"].tolist() == [0, 0, 0, 4]
    assert s["raw_bits"] == 32 * 4 * 3


def test_encoded_size_matches_serialization(tmp_path):
    g = random_graph(1000, 24, seed=6)
    s = graph_stats(g)
    enc = gap_encode(g)
    save_encoded(tmp_path / "g.ngr", enc)
    header = 4 + 6 * 4 + 8 * (g.N + 1)
    assert (tmp_path / "g.ngr").stat().st_size == header + -(-s["encoded_bits"] // 8)
    assert s["encoded_bits"] == g.N * (enc.degree_bits + g.R * enc.bit_width)


def test_plain_layout_roundtrip():
    g = random_graph(50, 6, seed=7)
    enc = plain_encode(g)
    assert enc.bit_width == 32
    assert enc.decode().neighbor_sets() == g.neighbor_sets()


def test_lenient_decode_drops_invalid_entries():
    vals = np.array([[1, 1, 0], [5, 0, 0], [0, 0, 0]])
    deg = np.array([3, 1, 7])
    g = decode_lenient(deg, vals, 3, cumulative=True, entry_point=0)
    g.validate()
    assert g.adjacency(0).tolist() == [1, 2]   # 1, 2, 2 -> duplicate dropped
    assert g.adjacency(1).tolist() == []       # 5 out of range
    assert g.adjacency(2).tolist() == [0]      # degree clamped, repeats dropped


def test_permute_relabels_consistently():
    g = random_graph(40, 5, seed=8)
    perm = np.random.default_rng(0).permutation(40)
    h = g.permute(perm)
    for v in range(40):
        assert set(h.adjacency(perm[v]).tolist()) == {int(perm[u]) for u in g.adjacency(v)}
    assert h.entry_point == perm[g.entry_point]
