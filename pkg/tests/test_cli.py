import json
import subprocess
import sys

import numpy as np
import pytest

from gridy import cli, parallel
from gridy.data import MultiBlockDataset, TimeSeriesBlock, write_dataset

FAST = ["--reps", "30", "--ajive-reps", "30", "--n-starts", "2", "--max-iter", "300"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_stagewise_chain_matches_pipeline(sim_dir, tmp_path):
    t = tmp_path
    assert run("rank", "--manifest", sim_dir, "--out", t / "rank.json", "--reps", 30, "--seed", 5) == 0
    assert run("segment", "--manifest", sim_dir, "--ranks", t / "rank.json", "--reps", 30, "--seed", 5,
               "--out", t / "seg") == 0
    assert run("fit", "--segments", t / "seg", "--out", t / "fit", "--n-starts", 2, "--max-iter", 300,
               "--seed", 5) == 0
    assert run("dynamics", "--fit", t / "fit", "--manifest", sim_dir, "--out", t / "dyn") == 0
    assert run("network", "--dyn", t / "dyn", "--out", t / "net") == 0
    truth = sim_dir.parent / "truth.json"
    assert run("evaluate", "--dyn", t / "dyn", "--manifest", sim_dir, "--truth", truth,
               "--out", t / "eval.csv") == 0
    lines = (t / "eval.csv").read_text().splitlines()
    assert len(lines) == 1 + 5 * 3

    assert run("pipeline", "--manifest", sim_dir, "--out", t / "all", "--seed", 5, *FAST) == 0
    # the stage-by-stage route reproduces the one-shot pipeline
    for name in ("rank.json",):
        assert (t / name).read_bytes() == (t / "all" / name).read_bytes()
    for sub in ("seg", "fit", "dyn", "net"):
        for f in sorted((t / "all" / sub).rglob("*.csv")):
            rel = f.relative_to(t / "all")
            assert (t / rel).read_bytes() == f.read_bytes(), rel


def test_pipeline_with_truth_and_plots(sim_dir, tmp_path, capsys):
    truth = sim_dir.parent / "truth.json"
    code = run("pipeline", "--manifest", sim_dir, "--out", tmp_path, "--truth", truth, "--plot-data",
               "--rank-joint", 2, "--rank-group", 1, "--solver", "als", *FAST)
    assert code == 0
    assert "joint rank 2, group rank 1" in capsys.readouterr().out
    assert (tmp_path / "evaluate.csv").is_file()
    assert (tmp_path / "plots" / "r2_per_variable.csv").is_file()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["overrides"] == {"rank_group": 1, "rank_joint": 2}


def test_simulate_command(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"d": 20, "T": 60, "K": 3, "c": 2.0}))
    code = run("simulate", "--config", cfg, "--reps", 2, "--seed", 7, "--out", tmp_path / "res.csv",
               "--rank-freq", tmp_path / "rf.csv", "--emit-data", tmp_path / "data", "--rank-mode", "estimated",
               "--boot-reps", 20, "--ajive-reps", 20, "--n-starts", 2)
    assert code == 0
    lines = (tmp_path / "res.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 5 * 3
    assert (tmp_path / "rf.csv").read_text().startswith("r_J,r_G,c,d,T,estimated_rank,count")
    assert (tmp_path / "data" / "manifest.json").is_file() and (tmp_path / "data" / "truth.json").is_file()


def test_exit_code_config_errors(tmp_path, capsys):
    assert run("pipeline", "--manifest", tmp_path / "missing.json", "--out", tmp_path / "o") == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("simulate", "--config", bad, "--out", tmp_path / "r.csv") == 2
    bad.write_text(json.dumps({"d": 20, "corr_type": 7}))
    assert run("simulate", "--config", bad, "--out", tmp_path / "r.csv") == 2
    assert run("rank", "--manifest", tmp_path / "missing.json", "--out", tmp_path / "r.json") == 2
    assert run("--threads", 0, "rank", "--manifest", tmp_path / "m.json", "--out", tmp_path / "r.json") == 2


def test_exit_code_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["pipeline"])
    assert info.value.code == 2


def test_exit_code_numerical_failure(tmp_path):
    blocks = tuple(TimeSeriesBlock(f"s{i}", np.zeros((30, 6)), 1 + i % 2) for i in range(4))
    manifest = write_dataset(MultiBlockDataset(blocks, tuple(f"V{i}" for i in range(6))), tmp_path / "d")
    code = run("pipeline", "--manifest", manifest, "--out", tmp_path / "o", "--rank", 2, "--rank-joint", 1,
               "--rank-group", 1, "--ajive-reps", 10)
    assert code == 3
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["stages_completed"] == ["rank", "segment"]


def _spy_threads(monkeypatch):
    seen = []
    original = parallel.pmap

    def spy(fn, items, threads=None):
        seen.append(parallel.max_threads())
        return original(fn, items, threads)

    for mod in ("gridy.rank_selection", "gridy.pipeline", "gridy.ajive"):
        monkeypatch.setattr(f"{mod}.pmap", spy, raising=False)
    return seen


def test_threads_flag(sim_dir, tmp_path, monkeypatch):
    monkeypatch.delenv("GRIDY_THREADS", raising=False)
    seen = _spy_threads(monkeypatch)
    assert run("--threads", 3, "rank", "--manifest", sim_dir, "--out", tmp_path / "r.json", "--reps", 10) == 0
    assert seen and set(seen) == {3}
    assert parallel.max_threads() == 1


def test_threads_env(sim_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("GRIDY_THREADS", "2")
    seen = _spy_threads(monkeypatch)
    assert run("rank", "--manifest", sim_dir, "--out", tmp_path / "r.json", "--reps", 10) == 0
    assert seen and set(seen) == {2}
    seen.clear()
    assert run("--threads", 4, "rank", "--manifest", sim_dir, "--out", tmp_path / "r2.json", "--reps", 10) == 0
    assert set(seen) == {4}
    # thread count never changes results
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "gridy.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("gridy")
    out = subprocess.run([sys.executable, "-m", "gridy.cli", "rank", "--manifest", str(tmp_path / "x.json"),
                          "--out", str(tmp_path / "r.json")], capture_output=True, text=True)
    assert out.returncode == 2
