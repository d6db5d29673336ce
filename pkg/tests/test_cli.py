import json
import subprocess
import sys

import pytest

from lobforge.cli import main
from lobforge.config import resolve
from lobforge.errors import ConfigError


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "run.json"
    cfg.write_text(json.dumps({"seed": 3, "sample": {"aggregation": "3w", "horizon_ms": 500},
                               "synthetic": {"kind": "drift", "n": 400, "depth": 8}}))
    assert run("synthetic", "--config", cfg, "--out", d / "tape.jsonl.gz", "--trades-out",
               d / "trades.jsonl") == 0
    assert run("sample", "--config", cfg, d / "tape.jsonl.gz", "--out", d / "train.lobs",
               "--test-out", d / "test.lobs") == 0
    return d, cfg


def test_pipeline(workspace, capsys):
    d, cfg = workspace
    assert run("train", "--config", cfg, "--arch", "SimpleCNN", "--epochs", 2, d / "train.lobs",
               "--out", d / "m.lobm") == 0
    assert run("predict", "--config", cfg, d / "m.lobm", d / "test.lobs", "--out", d / "f.csv") == 0
    summary = json.loads((d / "f.json").read_text())
    assert summary["n_samples"] > 0 and summary["mape_bps"] >= 0
    assert (d / "f.csv").read_text().startswith("# {")
    assert run("backtest", "--config", cfg, d / "m.lobm", d / "tape.jsonl.gz", "--trades",
               d / "trades.jsonl", "--out", d / "bt.csv") == 0
    bt = json.loads((d / "bt.json").read_text())
    assert set(bt["metrics"]) >= {"sharpe", "total_pnl", "max_drawdown", "log_growth"}
    assert (d / "bt.svg").read_text().lstrip().startswith("<?xml")
    assert run("report", d / "bt.json", d / "f.json", "--out", d / "r.html") == 0
    assert "bt.svg" in (d / "r.html").read_text()
    assert run("embed", d / "tape.jsonl.gz", "--max-frames", 3, "--out", d / "png") == 0
    assert len(list((d / "png").glob("*.png"))) == 3
    capsys.readouterr()


def test_persistence_backtest_and_ingest(workspace, tmp_path):
    d, cfg = workspace
    assert run("ingest", d / "tape.jsonl.gz", "--trades", d / "trades.jsonl", "--out", tmp_path / "t.jsonl") == 0
    assert (tmp_path / "t.jsonl.trades.jsonl").exists()
    assert run("backtest", "persistence", tmp_path / "t.jsonl", "--out", tmp_path / "p.csv") == 0


def test_train_is_byte_identical(workspace, tmp_path):
    d, cfg = workspace
    for name in ("a", "b"):
        assert run("train", "--config", cfg, "--arch", "CNN2LSTM", "--epochs", 1, d / "train.lobs",
                   "--out", tmp_path / f"{name}.lobm") == 0
    assert (tmp_path / "a.lobm").read_bytes() == (tmp_path / "b.lobm").read_bytes()


def test_analyze(tmp_path):
    for sym, seed in (("AAA", 1), ("BBB", 2)):
        assert run("synthetic", "--symbol", sym, "--seed", seed, "--n", 200, "--depth", 3,
                   "--out", tmp_path / f"{sym}.jsonl", "--trades-out", tmp_path / f"{sym}.trades.jsonl") == 0
    assert run("analyze", tmp_path / "AAA.trades.jsonl", tmp_path / "BBB.trades.jsonl", "--bucket-ms", 1000,
               "--out", tmp_path / "corr.csv") == 0
    rows = (tmp_path / "corr.csv").read_text().splitlines()
    assert rows[1] == "symbol,AAA,BBB" and rows[2].startswith("AAA,1.0,")
    assert (tmp_path / "corr.svg").exists()
    # a single symbol has nothing to correlate with
    assert run("analyze", tmp_path / "AAA.trades.jsonl", "--out", tmp_path / "one.csv") == 24


def test_exit_codes(workspace, tmp_path, capsys):
    d, cfg = workspace
    assert run("sample", d / "tape.jsonl.gz", "--horizon-ms", 100, "--out", tmp_path / "s.lobs") == 13
    assert run("backtest", "persistence", tmp_path / "missing.jsonl", "--out", tmp_path / "x.csv") == 3
    (tmp_path / "bad.lobm").write_bytes(b"junk")
    assert run("predict", tmp_path / "bad.lobm", d / "test.lobs", "--out", tmp_path / "x.csv") == 50
    assert "FormatError" in capsys.readouterr().err


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigError):
        resolve({"sample": {"horizn_ms": 1}}, {})


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "lobforge", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("lobforge ")
