"""Command line: ``nandann <verb> --config exp.ini --out runs/x --seed 7``.

Stages write their artifacts under ``--out`` and record them in
``manifest.json``. A stage whose key (its config sections, seed, code
version and upstream artifact hashes) and output hashes match the manifest
is skipped. On failure a JSON error record goes to stderr and to
``error.json`` and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as X
from . import report
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import GroundTruth, VectorDataset, load_vectors, read_vecs, recall_at_k, write_vectors
from .graph import gap_encode, load_graph, save_graph
from .mapping import LayoutPlan, plan_layout
from .pq import PQModel, load_codes, save_codes
from .search import batch_search
from .sim import AccessTrace, simulate

log = logging.getLogger("nandann")

FORMAT = 1  # manifest layout; bump when artifacts change incompatibly
SWEEPS = ("recall_qps", "queue_size", "hot_nodes", "bit_error", "traffic")

EXIT_FAILURE, EXIT_CONFIG, EXIT_ARTIFACT = 1, 2, 3


class ArtifactError(RuntimeError):
    pass


_HASHES: dict = {}


def sha256(path) -> str:
    st = Path(path).stat()
    memo = (str(path), st.st_mtime_ns, st.st_size)
    if memo in _HASHES:
        return _HASHES[memo]
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    _HASHES[memo] = h.hexdigest()
    return _HASHES[memo]


# ---------------------------------------------------------------------------
# stage table: config sections and upstream stages that feed each key


@dataclass(frozen=True)
class Stage:
    name: str
    sections: tuple
    upstream: tuple = ()
    version: int = 1


STAGES = {s.name: s for s in (
    Stage("build", ("dataset", "graph")),
    Stage("encode", ("pq",), ("build",)),
    Stage("search", ("search",), ("build", "encode")),
    Stage("map", ("mapping", "search"), ("build", "encode")),
    Stage("simulate", ("sim",), ("build", "encode", "map")),
    Stage("sweep_recall_qps", ("search",), ("build", "encode")),
    Stage("sweep_queue_size", ("sim",), ("simulate",)),
    Stage("sweep_hot_nodes", ("sim",), ("map", "simulate")),
    Stage("sweep_bit_error", ("errors", "search"), ("build", "encode")),
    Stage("sweep_traffic", ("sim", "mapping", "search"), ("build", "encode", "map")),
    Stage("eval", ()),
    Stage("report", ()),
)}


class Manifest:
    def __init__(self, out: Path):
        self.out = out
        self.path = out / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
            if self.data.get("format") != FORMAT:
                raise ArtifactError(
                    f"{self.path} has format {self.data.get('format')}, this build writes {FORMAT}; "
                    "use a fresh --out directory")
        else:
            self.data = {"format": FORMAT, "stages": {}}

    def entry(self, name: str) -> dict | None:
        return self.data["stages"].get(name)

    def intact(self, name: str) -> bool:
        e = self.entry(name)
        if e is None:
            return False
        return all((self.out / f).exists() and sha256(self.out / f) == h
                   for f, h in e["outputs"].items())

    def digest(self, name: str) -> str:
        e = self.entry(name)
        return hashlib.sha256(json.dumps(e["outputs"], sort_keys=True).encode()).hexdigest()

    def record(self, name: str, key: str, files: list, timing: dict) -> None:
        self.data["stages"][name] = {
            "version": STAGES[name].version, "key": key,
            "outputs": {f: sha256(self.out / f) for f in sorted(files)},
            "timing_columns": timing,
        }
        self.save()

    def save(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run context with lazily loaded artifacts


@dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    manifest: Manifest
    force: bool = False
    cache: dict = field(default_factory=dict)

    def key(self, name: str) -> str:
        st = STAGES[name]
        up = {}
        for u in st.upstream:
            self.require(u)
            up[u] = self.manifest.digest(u)
        blob = {"stage": name, "version": st.version, "config": self.cfg.digest(*st.sections),
                "upstream": up}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()

    def require(self, name: str) -> None:
        e = self.manifest.entry(name)
        if e is None:
            raise ArtifactError(f"missing upstream artifact: run the {name!r} stage first")
        if not self.manifest.intact(name):
            raise ArtifactError(f"artifacts of stage {name!r} are missing or modified; rerun it")
        if e["key"] != self.key(name):
            raise ArtifactError(
                f"stage {name!r} was produced with a different config or version; rerun it")

    def path(self, name: str) -> Path:
        return self.out / name

    def memo(self, name, fn):
        if name not in self.cache:
            self.cache[name] = fn()
        return self.cache[name]

    # artifacts ----------------------------------------------------------

    def dataset(self) -> VectorDataset:
        def load():
            metric = json.loads(self.path("dataset.json").read_text())["metric"]
            return load_vectors(self.path("base.fvecs"), metric=metric)
        return self.memo("dataset", load)

    def bundle(self) -> X.Bundle:
        def load():
            ds = self.dataset()
            q = read_vecs(self.path("queries.fvecs"))
            truth = GroundTruth(read_vecs(self.path("truth.ivecs")).astype(np.int64),
                                read_vecs(self.path("truth.fvecs")))
            g = load_graph(self.path("graph.ngr"))
            model = PQModel.load(self.path("pq.model"))
            codes = load_codes(self.path("codes.bin"))
            beta = json.loads(self.path("beta.json").read_text())["beta"]
            return X.Bundle(ds, q, truth, g, model, codes, beta)
        return self.memo("bundle", load)

    def reordered(self) -> X.Reordered:
        def load():
            from .mapping import VisitTrace, permute_dataset, permute_rows
            b = self.bundle()
            perm = np.load(self.path("permutation.npy"))
            visits = VisitTrace(np.load(self.path("visits.npy")), self.cfg.mapping.trace_samples)
            return X.Reordered(b.graph.permute(perm), permute_dataset(b.dataset, perm),
                               permute_rows(b.codes, perm), perm, visits)
        return self.memo("reordered", load)

    def sim_config(self):
        base = self.cfg.sim_config()
        w = json.loads(self.path("sim.json").read_text())["max_outstanding"]
        return base.replace(max_outstanding=w)


def run_stage(ctx: Context, name: str, fn) -> bool:
    """Run ``fn(ctx) -> (files, timing)`` unless the manifest says it is current."""
    key = ctx.key(name)
    e = ctx.manifest.entry(name)
    if not ctx.force and e is not None and e["key"] == key and ctx.manifest.intact(name):
        log.info("%s: up to date, skipped", name)
        return False
    t0 = time.perf_counter()
    files, timing = fn(ctx)
    ctx.manifest.record(name, key, files, timing)
    log.info("%s: wrote %s (%.1f s)", name, ", ".join(sorted(files)), time.perf_counter() - t0)
    return True


# ---------------------------------------------------------------------------
# stages


def _timing(csv_name: str, rows: list) -> dict:
    cols = [c for c in X.TIMING_COLUMNS if c in rows[0]]
    return {csv_name: cols} if cols else {}


def _figure(ctx, kind, rows, name) -> str:
    report.render(kind, rows, ctx.path(name))
    return name


def stage_build(ctx: Context):
    cfg = ctx.cfg
    ds, q = X.load_inputs(cfg)
    write_vectors(ctx.path("base.fvecs"), ds.vectors)
    write_vectors(ctx.path("queries.fvecs"), q)
    ctx.path("dataset.json").write_text(json.dumps(
        {"metric": ds.metric, "N": ds.N, "D": ds.D, "queries": len(q)}, sort_keys=True) + "\n")
    from .dataset import brute_force_knn
    from .graph import build_graph
    truth = brute_force_knn(ds, q, cfg.dataset.k)
    write_vectors(ctx.path("truth.ivecs"), truth.ids.astype(np.int32))
    write_vectors(ctx.path("truth.fvecs"), truth.distances)
    g = build_graph(ds, cfg.graph.R, cfg.graph.L_build, cfg.graph.alpha, seed=cfg.seed)
    save_graph(ctx.path("graph.ngr"), g, "gap")
    report.write_csv(ctx.path("graph.csv"), [X.compression_row(g)])
    ctx.cache.clear()
    return ["base.fvecs", "queries.fvecs", "dataset.json", "truth.ivecs", "truth.fvecs", "graph.ngr",
            "graph.csv"], {}


def stage_encode(ctx: Context):
    model, codes, beta = X.encode_stage(ctx.dataset(), ctx.cfg)
    model.save(ctx.path("pq.model"))
    save_codes(ctx.path("codes.bin"), codes)
    ctx.path("beta.json").write_text(json.dumps(
        {"beta": beta, "percentile": ctx.cfg.pq.beta_percentile}, sort_keys=True) + "\n")
    ctx.cache.pop("bundle", None)
    return ["pq.model", "codes.bin", "beta.json"], {}


def stage_search(ctx: Context):
    b = ctx.bundle()
    p = X.search_params(ctx.cfg, b.beta)
    batch = batch_search(b.index(), b.queries, p, ctx.cfg.search.parallelism)
    write_vectors(ctx.path("found.ivecs"), batch.ids.astype(np.int32))
    batch.write_jsonl(ctx.path("results.jsonl"),
                      {f"recall@{p.k}": recall_at_k(batch.ids, b.truth.ids, p.k), "L": p.L})
    rows = X.recall_qps_rows(b.index(), b.queries, b.truth, p, [p.L], ctx.cfg.search.parallelism)
    report.write_csv(ctx.path("search.csv"), rows)
    return ["found.ivecs", "results.jsonl", "search.csv"], _timing("search.csv", rows)


def stage_map(ctx: Context):
    b = ctx.bundle()
    ro = X.reorder(b, ctx.cfg)
    np.save(ctx.path("visits.npy"), ro.visits.counts)
    np.save(ctx.path("permutation.npy"), ro.permutation)
    hc = X.hot_count(b.graph.N, ctx.cfg.mapping.hot_fraction)
    plan = plan_layout(ro.graph, hc, ctx.cfg.sim_config(), b.dataset.D,
                       permutation=ro.permutation)
    plan.save(ctx.path("layout.plan"))
    inv = np.argsort(ro.permutation)
    rows = [{"hot_fraction": p, "hot_count": X.hot_count(b.graph.N, p),
             "visit_coverage": ro.visits.coverage(inv[:X.hot_count(b.graph.N, p)])}
            for p in sorted(set(ctx.cfg.sim.hot_percentages) | {ctx.cfg.mapping.hot_fraction})]
    report.write_csv(ctx.path("mapping.csv"), rows)
    ctx.cache.pop("reordered", None)
    return ["visits.npy", "permutation.npy", "layout.plan", "mapping.csv"], {}


def stage_simulate(ctx: Context):
    b, ro = ctx.bundle(), ctx.reordered()
    trace = X.record_trace(b, ro, ctx.cfg)
    trace.save(ctx.path("trace.bin"))
    plan = LayoutPlan.load(ctx.path("layout.plan"))
    base = ctx.cfg.sim_config()
    files = ["trace.bin", "sim.json", "simulate.csv", "simulate.png"]
    if ctx.cfg.sim.calibrate_util > 0:
        cal = []
        for w in ctx.cfg.sim.calibrate_windows:
            rep = simulate(trace, plan, base.replace(n_queues=32, max_outstanding=int(w)))
            cal.append({"max_outstanding": int(w), **rep.row()})
        best = min(cal, key=lambda r: (abs(r["core_utilization"] - ctx.cfg.sim.calibrate_util),
                                       r["max_outstanding"]))
        config = base.replace(max_outstanding=best["max_outstanding"])
        report.write_csv(ctx.path("calibration.csv"), cal)
        files.append("calibration.csv")
    else:
        config = base
    rep = simulate(trace, plan, config)
    ctx.path("sim.json").write_text(json.dumps(
        {"max_outstanding": config.max_outstanding, "n_queues": config.n_queues,
         "report": rep.row(), "counts": rep.counts}, indent=2, sort_keys=True) + "\n")
    rows = [{"max_outstanding": config.max_outstanding, **rep.row()}]
    report.write_csv(ctx.path("simulate.csv"), rows)
    _figure(ctx, "simulate", rows, "simulate.png")
    return files, {}


def sweep_rows(ctx: Context, kind: str) -> list:
    cfg = ctx.cfg
    if kind == "recall_qps":
        b = ctx.bundle()
        p = X.search_params(cfg, b.beta)
        return X.recall_qps_rows(b.index(), b.queries, b.truth, p, cfg.search.L_list,
                                 cfg.search.parallelism)
    if kind == "bit_error":
        b = ctx.bundle()
        return X.bit_error_rows(b, cfg, X.search_params(cfg, b.beta))
    trace = AccessTrace.load(ctx.path("trace.bin"))
    config = ctx.sim_config()
    if kind == "queue_size":
        plan = LayoutPlan.load(ctx.path("layout.plan"))
        return X.queue_rows(trace, plan, config, cfg.sim.queue_sizes)
    b, ro = ctx.bundle(), ctx.reordered()
    if kind == "hot_nodes":
        return X.hot_rows(ro, trace, config, b.dataset.D, cfg.sim.hot_percentages)
    if kind == "traffic":
        return X.traffic_rows(b, ro, cfg, config)
    raise ConfigError(f"unknown sweep {kind!r}")


def stage_sweep(kind: str):
    def run(ctx: Context):
        rows = sweep_rows(ctx, kind)
        csv_name = f"sweep_{kind}.csv"
        report.write_csv(ctx.path(csv_name), rows)
        files = [csv_name]
        if kind == "recall_qps":
            # ablations ride along in their own table
            b = ctx.bundle()
            extra = X.ablation_rows(b.index(), b.queries, b.truth,
                                    X.search_params(ctx.cfg, b.beta), ctx.cfg.search.L_list,
                                    ctx.cfg.search.parallelism)
            report.write_csv(ctx.path("sweep_recall_qps_ablation.csv"), extra)
            files.append("sweep_recall_qps_ablation.csv")
            timing = {**_timing(csv_name, rows), **_timing(files[-1], extra)}
            files.append(_figure(ctx, kind, extra, f"sweep_{kind}.png"))
        else:
            timing = {}
            files.append(_figure(ctx, kind, rows, f"sweep_{kind}.png"))
        return files, timing
    return run


# ---------------------------------------------------------------------------
# verbs


def cmd_build(ctx, args):
    run_stage(ctx, "build", stage_build)


def cmd_encode(ctx, args):
    run_stage(ctx, "encode", stage_encode)


def cmd_search(ctx, args):
    run_stage(ctx, "search", stage_search)


def cmd_map(ctx, args):
    run_stage(ctx, "map", stage_map)


def cmd_simulate(ctx, args):
    run_stage(ctx, "simulate", stage_simulate)


def cmd_sweep(ctx, args):
    run_stage(ctx, f"sweep_{args.kind}", stage_sweep(args.kind))


def cmd_eval(ctx, args):
    """Recall of a found-ids file against a truth-ids file (defaults: this run's)."""
    found_p = Path(args.found) if args.found else ctx.path("found.ivecs")
    truth_p = Path(args.truth) if args.truth else ctx.path("truth.ivecs")
    for p in (found_p, truth_p):
        if not p.exists():
            raise ArtifactError(f"missing upstream artifact {p}")
    found, truth = read_vecs(found_p), read_vecs(truth_p)
    if len(found) != len(truth):
        raise ArtifactError(f"{found_p} has {len(found)} rows, {truth_p} has {len(truth)}")
    k = args.k or min(found.shape[1], truth.shape[1], ctx.cfg.dataset.k)
    rows = [{"found": found_p.name, "truth": truth_p.name, "queries": len(found), "k": k,
             "recall": recall_at_k(found, truth, k)}]
    report.write_csv(ctx.path("eval.csv"), rows)
    key = hashlib.sha256(f"{sha256(found_p)}:{sha256(truth_p)}:{k}".encode()).hexdigest()
    ctx.manifest.record("eval", key, ["eval.csv"], {})
    log.info("recall@%d = %.4f", k, rows[0]["recall"])


def cmd_report(ctx, args):
    """Render a figure for every table present in the output directory."""
    made = []
    for kind in SWEEPS:
        src = ctx.path(f"sweep_{kind}_ablation.csv" if kind == "recall_qps" else f"sweep_{kind}.csv")
        if src.exists():
            made.append(report.render(kind, report.read_csv(src), ctx.path(f"sweep_{kind}.png")).name)
    if ctx.path("simulate.csv").exists():
        made.append(report.render("simulate", report.read_csv(ctx.path("simulate.csv")),
                                  ctx.path("simulate.png")).name)
    stages = sorted(set(ctx.manifest.data["stages"]) - {"report"})
    summary = {"figures": made, "stages": stages}
    ctx.path("report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    key = hashlib.sha256(json.dumps({s: ctx.manifest.digest(s) for s in stages},
                                    sort_keys=True).encode()).hexdigest()
    ctx.manifest.record("report", key, made + ["report.json"], {})
    log.info("rendered %d figures", len(made))


def cmd_run(ctx, args):
    """Every stage, every sweep, then eval and report."""
    for verb in (cmd_build, cmd_encode, cmd_search, cmd_map, cmd_simulate):
        verb(ctx, args)
    for kind in SWEEPS:
        run_stage(ctx, f"sweep_{kind}", stage_sweep(kind))
    args.found = args.truth = None
    args.k = None
    cmd_eval(ctx, args)
    cmd_report(ctx, args)


VERBS = {"build": cmd_build, "encode": cmd_encode, "search": cmd_search, "map": cmd_map,
         "simulate": cmd_simulate, "eval": cmd_eval, "sweep": cmd_sweep, "report": cmd_report,
         "run": cmd_run}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file (defaults: bundled toy run)")
    common.add_argument("--out", required=True, help="artifact directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--force", action="store_true", help="rerun even when up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="nandann", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for name in ("build", "encode", "search", "map", "simulate", "report", "run"):
        sub.add_parser(name, parents=[common], help=VERBS[name].__doc__)
    ev = sub.add_parser("eval", parents=[common], help="recall of found ids against truth ids")
    ev.add_argument("--found", help="ivecs of returned ids")
    ev.add_argument("--truth", help="ivecs of true neighbor ids")
    ev.add_argument("--k", type=int)
    sw = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV and figure")
    sw.add_argument("kind", choices=SWEEPS)
    return ap


def _error_record(exc: BaseException, verb: str | None) -> tuple[int, dict]:
    if isinstance(exc, (ConfigError, argparse.ArgumentError)):
        code = EXIT_CONFIG
    elif isinstance(exc, ArtifactError):
        code = EXIT_ARTIFACT
    else:
        code = EXIT_FAILURE
    return code, {"status": "error", "verb": verb, "error": type(exc).__name__,
                  "message": str(exc), "exit_code": code}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").unlink(missing_ok=True)
        ctx = Context(cfg, out, Manifest(out), args.force)
        VERBS[args.verb](ctx, args)
    except Exception as exc:  # every failure becomes an error record
        code, rec = _error_record(exc, args.verb)
        text = json.dumps(rec, sort_keys=True)
        print(text, file=sys.stderr)
        if out.is_dir():
            (out / "error.json").write_text(text + "\n")
        log.debug("traceback", exc_info=True)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
