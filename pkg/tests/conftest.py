import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nandann.dataset import VectorDataset, brute_force_knn
from nandann.graph import build_graph
from nandann.pq import encode, train_pq

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def clustered_1k():
    """1000 clustered 16-d points plus 50 queries."""
    rng = np.random.default_rng(11)
    centers = rng.normal(0, 3, (12, 16))
    a = rng.integers(0, 12, 1050)
    x = (centers[a] + rng.normal(0, 1, (1050, 16))).astype(np.float32)
    return VectorDataset(x[:1000]), x[1000:]


@pytest.fixture(scope="session")
def small_index(clustered_1k):
    ds, q = clustered_1k
    g = build_graph(ds, R=16, L_build=40, seed=0)
    model = train_pq(ds, M=8, C=32, iters=10, seed=0)
    codes = encode(model, ds)
    truth = brute_force_knn(ds, q, 10)
    return ds, q, g, model, codes, truth


# acceptance summary: one line per criterion in the terminal report

CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one pass/fail line."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA.setdefault(str(n), []).append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA, key=lambda s: (int(s.rstrip("ab")), s)):
        for line in CRITERIA[n]:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def artifact_snapshot():
    """Comparable view of a run directory: output hashes from the manifest,
    with wall-clock columns dropped from CSVs that carry them."""
    import json

    from nandann.experiments import TIMING_COLUMNS
    from nandann.report import read_csv

    def snap(out):
        m = json.loads((out / "manifest.json").read_text())
        view = {}
        for st in m["stages"].values():
            timed = st["timing_columns"]
            for f, h in st["outputs"].items():
                if f in timed:
                    view[f] = [{k: v for k, v in r.items() if k not in TIMING_COLUMNS}
                               for r in read_csv(out / f)]
                elif f != "sweep_recall_qps.png":  # plots wall-clock QPS
                    view[f] = h
        return view
    return snap
