import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nandann.cli import EXIT_ARTIFACT, EXIT_CONFIG, main
from nandann.config import ConfigError, ExperimentConfig, load_config
from nandann.dataset import read_vecs, write_vectors
from nandann.report import read_csv

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.ini"


def run(*argv):
    return main([*argv])


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    assert run("run", "--config", str(SMOKE), "--out", str(out)) == 0
    return out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_run_writes_every_artifact(smoke_run):
    m = _manifest(smoke_run)
    stages = set(m["stages"])
    assert {"build", "encode", "search", "map", "simulate", "eval", "report"} <= stages
    for kind in ("recall_qps", "queue_size", "hot_nodes", "bit_error", "traffic"):
        assert f"sweep_{kind}" in stages
        assert (smoke_run / f"sweep_{kind}.csv").exists()
        assert (smoke_run / f"sweep_{kind}.png").read_bytes()[:4] == b"\x89PNG"
    for st in m["stages"].values():
        for name in st["outputs"]:
            assert (smoke_run / name).exists()
    assert not (smoke_run / "error.json").exists()


def test_recall_qps_table(smoke_run):
    rows = read_csv(smoke_run / "sweep_recall_qps.csv")
    assert list(rows[0]) == ["L", "recall@10", "qps", "latency_us", "pq_count", "exact_count",
                             "distance_computations", "hops_per_query", "terminated_share"]
    Ls = [r["L"] for r in rows]
    assert Ls == sorted(set(Ls))
    assert all(0 <= r["recall@10"] <= 1 and r["qps"] > 0 for r in rows)
    assert _manifest(smoke_run)["stages"]["sweep_recall_qps"]["timing_columns"] == {
        "sweep_recall_qps.csv": ["qps", "latency_us"],
        "sweep_recall_qps_ablation.csv": ["qps", "latency_us"]}


def test_queue_sweep_is_monotone(smoke_run):
    rows = read_csv(smoke_run / "sweep_queue_size.csv")
    qps = [r["qps"] for r in sorted(rows, key=lambda r: r["n_queues"])]
    assert all(b >= a for a, b in zip(qps, qps[1:]))


def test_bit_error_sweep_is_monotone(smoke_run):
    rows = sorted(read_csv(smoke_run / "sweep_bit_error.csv"), key=lambda r: r["rber"])
    rec = [r["recall@10"] for r in rows]
    assert rows[0]["rber"] == 0
    assert all(b <= a for a, b in zip(rec, rec[1:]))
    search_recall = json.loads((smoke_run / "results.jsonl").read_text().splitlines()[-1])
    assert rec[0] == search_recall["recall@10"]


def test_traffic_and_hot_tables(smoke_run):
    t = {r["system"]: r for r in read_csv(smoke_run / "sweep_traffic.csv")}
    assert t["pq_32b"]["bytes_total_per_query"] < t["exact_32b"]["bytes_total_per_query"]
    assert t["pq_gap"]["bytes_index_per_query"] < t["pq_32b"]["bytes_index_per_query"]
    hot = read_csv(smoke_run / "sweep_hot_nodes.csv")
    assert hot[0]["hot_fraction"] == 0 and hot[0]["speedup"] == pytest.approx(1.0)


def test_eval_verb(smoke_run, tmp_path):
    truth = smoke_run / "truth.ivecs"
    assert run("eval", "--out", str(tmp_path), "--found", str(truth), "--truth", str(truth)) == 0
    assert read_csv(tmp_path / "eval.csv")[0]["recall"] == 1.0
    found = read_vecs(smoke_run / "found.ivecs")
    ours = read_csv(smoke_run / "eval.csv")[0]["recall"]
    t = read_vecs(truth)
    assert ours == pytest.approx(np.mean([len(set(a) & set(b)) / 10 for a, b in zip(found, t)]))


def test_rerun_is_skipped(smoke_run, caplog):
    before = (smoke_run / "manifest.json").read_bytes()
    mtime = (smoke_run / "found.ivecs").stat().st_mtime_ns
    with caplog.at_level("INFO"):
        assert run("search", "--config", str(SMOKE), "--out", str(smoke_run)) == 0
    assert "up to date" in caplog.text
    assert (smoke_run / "found.ivecs").stat().st_mtime_ns == mtime
    assert (smoke_run / "manifest.json").read_bytes() == before


def test_changed_output_triggers_rerun(smoke_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(smoke_run, out)
    (out / "search.csv").write_text("tampered\n")
    assert run("search", "--config", str(SMOKE), "--out", str(out)) == 0
    assert (out / "search.csv").read_text() != "tampered\n"


def test_missing_upstream_is_an_artifact_error(tmp_path, capsys):
    code = run("search", "--config", str(SMOKE), "--out", str(tmp_path))
    assert code == EXIT_ARTIFACT
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["status"] == "error" and rec["exit_code"] == EXIT_ARTIFACT
    assert json.loads((tmp_path / "error.json").read_text()) == rec


def test_config_change_needs_upstream_rebuild(smoke_run, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(smoke_run, out)
    assert run("search", "--config", str(SMOKE), "--out", str(out), "--seed", "5") == EXIT_ARTIFACT


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[graph]\nR = many\n")
    assert run("build", "--config", str(bad), "--out", str(tmp_path / "o")) == EXIT_CONFIG
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "ConfigError"
    assert run("build", "--config", str(tmp_path / "none.ini"), "--out",
               str(tmp_path / "o")) == EXIT_CONFIG


def test_console_script_failure_record(tmp_path):
    p = subprocess.run([sys.executable, "-m", "nandann.cli", "simulate", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert p.returncode == EXIT_ARTIFACT
    assert json.loads(p.stderr.strip().splitlines()[-1])["verb"] == "simulate"


def test_same_seed_same_artifacts(smoke_run, tmp_path, artifact_snapshot):
    out = tmp_path / "again"
    assert run("run", "--config", str(SMOKE), "--out", str(out)) == 0
    a, b = artifact_snapshot(smoke_run), artifact_snapshot(out)
    assert a.keys() == b.keys()
    assert a == b


def test_seed_flag_changes_outputs(smoke_run, tmp_path):
    out = tmp_path / "seeded"
    assert run("build", "--config", str(SMOKE), "--out", str(out), "--seed", "9") == 0
    assert run("encode", "--config", str(SMOKE), "--out", str(out), "--seed", "9") == 0
    a = _manifest(smoke_run)["stages"]["encode"]["outputs"]["codes.bin"]
    assert _manifest(out)["stages"]["encode"]["outputs"]["codes.bin"] != a


def test_external_vector_files(tmp_path):
    rng = np.random.default_rng(0)
    write_vectors(tmp_path / "b.fvecs", rng.normal(size=(300, 8)).astype(np.float32))
    write_vectors(tmp_path / "q.fvecs", rng.normal(size=(20, 8)).astype(np.float32))
    cfg = tmp_path / "files.ini"
    cfg.write_text("[dataset]\nkind = files\nbase = b.fvecs\nqueries = q.fvecs\n"
                   "[pq]\nM = 4\nC = 16\niters = 3\nbeta_sample = 100\n"
                   "[graph]\nR = 8\nL_build = 16\n[search]\nL = 20\n")
    for verb in ("build", "encode", "search"):
        assert run(verb, "--config", str(cfg), "--out", str(tmp_path / "o")) == 0
    assert read_vecs(tmp_path / "o" / "found.ivecs").shape == (20, 10)


# config loader


def test_config_defaults_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nseed = 4\n[search]\nL_list = 10, 40\net = off\n"
                 "[sim]\nconfig = hw.ini\n")
    cfg = load_config(p)
    assert cfg.seed == 4
    assert cfg.search.L_list == (10, 40) and cfg.search.et is False
    assert cfg.sim.config == str(tmp_path / "hw.ini")
    assert cfg.graph == ExperimentConfig().graph
    with pytest.raises(ConfigError):
        cfg.sim_config()


@pytest.mark.parametrize("text", ["[graph]\nwidth = 3\n", "[gpu]\nx = 1\n",
                                  "[dataset]\nkind = imagenet\n", "[search]\nL_list =\n",
                                  "[search]\net = perhaps\n", "[experiment]\nname = x\n"])
def test_config_rejections(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_digest_scopes():
    a = ExperimentConfig()
    b = ExperimentConfig(search=a.search.__class__(L=99))
    assert a.digest("graph") == b.digest("graph")
    assert a.digest("search") != b.digest("search")
    assert a.digest("graph") != a.with_seed(1).digest("graph")
