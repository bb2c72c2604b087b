"""CSV tables and matplotlib figures for experiment outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_csv(path, rows: list, columns: list | None = None) -> None:
    if not rows:
        raise ValueError(f"no rows to write to {path}")
    if columns is None:
        columns = []
        for r in rows:
            columns += [c for c in r if c not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in columns})


def _num(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return [{k: _num(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _recall_key(rows):
    return next(k for k in rows[0] if str(k).startswith("recall@"))


def _save(fig, path):
    fig.tight_layout()
    # no embedded dates, so identical data gives identical files
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_recall_qps(rows, path):
    key = _recall_key(rows)
    groups = {}
    for r in rows:
        groups.setdefault(r.get("variant") or "search", []).append(r)
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for name, rs in groups.items():
        rs = sorted(rs, key=lambda r: r["L"])
        a.plot([r[key] for r in rs], [r["distance_computations"] / 1e3 for r in rs], "o-",
               label=name)
        b.plot([r[key] for r in rs], [r["qps"] for r in rs], "o-", label=name)
    a.set_xlabel(key)
    a.set_ylabel("distance computations (thousands)")
    b.set_xlabel(key)
    b.set_ylabel("QPS (wall clock)")
    b.set_yscale("log")
    a.legend()
    _save(fig, path)


def plot_queue_size(rows, path):
    rs = sorted(rows, key=lambda r: r["n_queues"])
    x = [r["n_queues"] for r in rs]
    fig, a = plt.subplots(figsize=(5, 4))
    a.plot(x, [r["qps"] / 1e3 for r in rs], "o-", color="C0")
    a.set_xscale("log", base=2)
    a.set_xlabel("queues")
    a.set_ylabel("modeled kQPS", color="C0")
    b = a.twinx()
    b.plot(x, [r["core_utilization"] for r in rs], "s--", color="C1")
    b.set_ylabel("core utilization (%)", color="C1")
    _save(fig, path)


def plot_hot_nodes(rows, path):
    rs = sorted(rows, key=lambda r: r["hot_fraction"])
    x = [100 * r["hot_fraction"] for r in rs]
    parts = [k for k in rs[0] if k.startswith("t_") and k.endswith("_ns")]
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    bottom = [0.0] * len(rs)
    pos = range(len(rs))
    for k in parts:
        vals = [r[k] / 1e3 for r in rs]
        a.bar(pos, vals, bottom=bottom, label=k[2:-3])
        bottom = [u + v for u, v in zip(bottom, vals)]
    a.set_xticks(list(pos), [f"{v:g}" for v in x])
    a.set_xlabel("hot nodes (%)")
    a.set_ylabel("mean latency (us)")
    a.legend(fontsize=8)
    b.plot(x, [r["speedup"] for r in rs], "o-")
    b.set_xlabel("hot nodes (%)")
    b.set_ylabel("latency reduction vs 0%")
    _save(fig, path)


def plot_bit_error(rows, path):
    key = _recall_key(rows)
    rs = sorted(rows, key=lambda r: r["rber"])
    fig, a = plt.subplots(figsize=(5, 4))
    x = [max(r["rber"], 1e-7) for r in rs]
    a.plot(x, [r[key] for r in rs], "o-")
    a.set_xscale("log")
    a.set_xlabel("raw bit error rate (0 drawn at 1e-7)")
    a.set_ylabel(key)
    _save(fig, path)


def plot_traffic(rows, path):
    parts = [k for k in rows[0] if k.startswith("bytes_") and k.endswith("_per_query")
             and k != "bytes_total_per_query"]
    names = [r["system"] for r in rows]
    fig, a = plt.subplots(figsize=(7, 4))
    bottom = [0.0] * len(rows)
    pos = range(len(rows))
    for k in parts:
        vals = [r[k] / 1024 for r in rows]
        a.bar(pos, vals, bottom=bottom, label=k[6:-10])
        bottom = [u + v for u, v in zip(bottom, vals)]
    a.set_xticks(list(pos), names, rotation=20)
    a.set_ylabel("KiB per query")
    a.legend()
    _save(fig, path)


def plot_breakdown(rows, path):
    parts = [k for k in rows[0] if k.startswith("t_") and k.endswith("_ns")]
    fig, a = plt.subplots(figsize=(5, 4))
    r = rows[-1]
    a.pie([r[k] for k in parts], labels=[k[2:-3] for k in parts], autopct="%1.0f%%")
    a.set_title(f"latency breakdown, {r['n_queues']} queues")
    _save(fig, path)


FIGURES = {
    "recall_qps": plot_recall_qps,
    "queue_size": plot_queue_size,
    "hot_nodes": plot_hot_nodes,
    "bit_error": plot_bit_error,
    "traffic": plot_traffic,
    "simulate": plot_breakdown,
}


def render(kind: str, rows: list, path) -> Path:
    if kind not in FIGURES:
        raise ValueError(f"no figure for {kind!r}")
    FIGURES[kind](rows, path)
    return Path(path)
