"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import json
import logging
import os
import statistics
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lobforge import models as M
from lobforge.backtest import StrategyConfig, run_backtest
from lobforge.book import SnapshotSeries, TradeEvent, load_tape
from lobforge.cli import main as cli_main
from lobforge.embedding import (EmbedConfig, GlobalStats, embed_snapshot, merge_stacked, scale_prices,
                                scale_quantities)
from lobforge.metrics import mape, max_drawdown, sharpe, total_pnl
from lobforge.nn import Rng, grad_check
from lobforge.sampling import SampleSpec, build_samples, split_by_time, stats_for_training
from lobforge.synthetic import generate_tape, generate_trades

from conftest import make_snapshot, random_snapshot
from gradutil import LAYER_CHECKS
from reference_sim import JitterPredictor, reference_backtest, replay_inputs

# tolerances and budgets as stated by the acceptance criteria
SCALING_ORACLE_ATOL = 1e-12
SCALING_BUDGET_S = 1.0
LAYER_GRAD_TOL = 1e-4
NET_GRAD_TOL = 1e-3
GRAD_SEEDS = 20
NET_KINDS = M.STACKED_KINDS + M.MERGED_KINDS  # Persistence has nothing to differentiate
GRAD_BUDGET_S = 120.0
CNN2LSTM_FRAMES = (2, 3, 5, 10, 30)
LEARN_SAMPLES = 5000
LEARN_MARGIN = 0.10
LEARN_BUDGET_S = 600.0
BACKTEST_SEEDS = 10
BACKTEST_STEPS = 1000
ACCOUNTING_ATOL = 1e-9
BTC_MIN_SAMPLES = 5000

log = logging.getLogger("lobforge.acceptance")


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def test_c01_scaling_correctness(verdict):
    rng = np.random.default_rng(2024)
    snaps = [random_snapshot(rng, depth=int(rng.integers(1, 51)), ts=i) for i in range(1000)]
    t0 = time.perf_counter()
    bad = []
    q_all = [float(v) for s in snaps for v in list(s.asks[:, 1]) + list(s.bids[:, 1])]
    lo, hi, mean, std = min(q_all), max(q_all), statistics.fmean(q_all), statistics.pstdev(q_all)
    stats = GlobalStats(lo, hi, mean, std)
    z_cfg = EmbedConfig("zscore", quantize_255=False).with_stats("TEST", stats)
    g_cfg = EmbedConfig("minmax_global", quantize_255=False).with_stats("TEST", stats)
    for k, s in enumerate(snaps):
        a, b = scale_prices(s)
        if not ((a > 0) & (a <= 1)).all() or not ((b > 0) & (b <= 1)).all() or a[-1] != 1.0 or b[-1] != 1.0:
            bad.append((k, "price"))
        for side in (s.asks[:, 1], s.bids[:, 1]):
            d = scale_quantities(side, "minmax_domain")
            if side.size > 1 and side.max() > side.min() and not (d.min() == 0.0 and d.max() == 1.0):
                bad.append((k, "domain"))
        z = embed_snapshot(s, z_cfg).data
        g = embed_snapshot(s, g_cfg).data
        for col, side in ((1, s.asks), (3, s.bids)):
            for i in range(s.depth):
                q = float(side[i, 1])
                if abs(z[i, col] - (q - mean) / std) > SCALING_ORACLE_ATOL:
                    bad.append((k, "zscore"))
                if abs(g[i, col] - (q - lo) / (hi - lo)) > SCALING_ORACLE_ATOL:
                    bad.append((k, "global"))
    elapsed = time.perf_counter() - t0
    verdict(1, not bad and elapsed < SCALING_BUDGET_S,
            f"{len(snaps)} snapshots, {len(bad)} violations, {elapsed:.2f}s")


def test_c02_representation_equivalence(verdict):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        L, D = int(rng.integers(1, 31)), int(rng.integers(1, 51))
        stacked = rng.uniform(0, 255, (L, D, 4))
        merged = merge_stacked(stacked)
        j, d, c = np.meshgrid(np.arange(L), np.arange(D), np.arange(4), indexing="ij")
        mismatches += int((merged[d, j * 4 + c] != stacked[j, d, c]).sum())
    verdict(2, mismatches == 0, f"100 frame sets, {mismatches} mismatched entries")


def test_c03_gradient_checks(verdict):
    t0 = time.perf_counter()
    worst = {}
    for name, check in LAYER_CHECKS.items():
        worst[name] = max(check(seed) for seed in range(GRAD_SEEDS))
    for kind in NET_KINDS:
        arch = M.ArchSpec(kind, 3, 8, 4)
        shape = (2,) + arch.input_shape()

        def draw(rng):
            return rng.uniform(shape, 0, 255)

        errs = []
        for seed in range(GRAD_SEEDS):
            net = M.build_model(arch, seed=seed).net
            errs.append(grad_check(net, draw(Rng(seed, "x")), seed=seed, resample=draw, max_coords=16,
                                   tolerance=NET_GRAD_TOL, input_eps=1e-6 / arch.input_scale).max_rel_error)
        worst[kind] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(worst[n] < LAYER_GRAD_TOL for n in LAYER_CHECKS) and \
        all(worst[k] < NET_GRAD_TOL for k in NET_KINDS) and elapsed < GRAD_BUDGET_S
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(3, ok, f"{GRAD_SEEDS} seeds; worst rel err {detail}; {elapsed:.0f}s")


def test_c04_cnn2lstm_contract(verdict):
    got = {L: M.build_model(M.ArchSpec("CNN2LSTM", L, 50, 4)).encoder_length for L in CNN2LSTM_FRAMES}
    want = {L: 26 * max(16, 2 * L) for L in CNN2LSTM_FRAMES}
    verdict(4, got == want, f"encoder lengths {got}")


def test_c05_synthetic_learnability(verdict):
    t0 = time.perf_counter()
    L = 5
    series = generate_tape("signal", n=LEARN_SAMPLES + L, depth=10, seed=11)
    samples = build_samples(series, SampleSpec(frame_count=L, horizon_ms=250))
    train_set, test_set = split_by_time(samples, int(series.ts[int(0.8 * len(series))]))
    # no-change forecast computed straight from the sample mids
    persistence = float(np.mean(np.abs(test_set.future_mid - test_set.anchor_mid) / test_set.future_mid) * 100)
    scores = {}
    for kind in ("SimpleCNN", "CNN2LSTM"):
        m = M.build_model(M.arch_for(train_set, kind), seed=0)
        M.train(m, train_set, M.TrainConfig(epochs=5, batch=32, seed=0))
        scores[kind] = mape(test_set.future_mid, M.predict(m, test_set))
    elapsed = time.perf_counter() - t0
    ok = len(samples) == LEARN_SAMPLES and elapsed < LEARN_BUDGET_S and \
        all(v < (1 - LEARN_MARGIN) * persistence for v in scores.values())
    detail = ", ".join(f"{k} {v:.5f}%" for k, v in scores.items())
    verdict(5, ok, f"{len(samples)} samples; Persistence {persistence:.5f}%, {detail}; {elapsed:.0f}s")


def test_c06_backtest_oracle_equivalence(verdict):
    mismatched = []
    for seed in range(BACKTEST_SEEDS):
        series = generate_tape("meanrev", n=BACKTEST_STEPS + 1, depth=5, seed=seed, noise=0.05)
        trades = generate_trades(series, seed=seed)
        pred = JitterPredictor(seed, len(series))
        res = run_backtest(series, trades, pred)
        ref = reference_backtest(*replay_inputs(series, trades, pred), start=0)
        rows = list(zip(res.ts.tolist(), res.pnl.tolist(), res.equity.tolist(), res.inventory.tolist()))
        if len(res) != BACKTEST_STEPS or rows != [tuple(r) for r in ref]:
            mismatched.append(seed)
    verdict(6, not mismatched, f"{BACKTEST_SEEDS} tapes x {BACKTEST_STEPS} steps, mismatched seeds {mismatched}")


def test_c07_accounting_identity(verdict):
    worst, runs, breaches = 0.0, 0, 0
    configs = [StrategyConfig(), StrategyConfig(taker_at_touch=True), StrategyConfig(use_trade_tape=False),
               StrategyConfig(paper_literal_fill_rule=True), StrategyConfig(quote_spread=0.02)]
    for seed in range(4):
        for kind in ("drift", "meanrev", "signal"):
            series = generate_tape(kind, n=400, depth=5, seed=seed)
            trades = generate_trades(series, seed=seed)
            for cfg in configs:
                # the engine also asserts both invariants per step
                res = run_backtest(series, trades, JitterPredictor(seed, len(series), scale=0.2), cfg)
                curve = np.r_[res.initial_equity, res.equity]
                worst = max(worst, abs(curve[-1] - curve[0] - res.pnl.sum()))
                # post-step inventory lies between the two individually capped outcomes,
                # so it is bounded by the cap at the cheaper quote (fill price == quote price here)
                if not cfg.taker_at_touch:
                    for inv, fills in zip(res.inventory, res.fills):
                        if fills:
                            px = min(f.price for f in fills)
                            breaches += int(abs(inv) * px > cfg.max_side_notional + ACCOUNTING_ATOL)
                runs += 1
    verdict(7, worst <= ACCOUNTING_ATOL and breaches == 0,
            f"{runs} runs, worst |equity_N - equity_0 - sum pnl| = {worst:.1e}, {breaches} cap breaches")


def test_c08_metric_hand_cases(verdict):
    got = (sharpe([2, 0, 2, 0]), max_drawdown([1, -2, 1]), mape([100.0], [101.0]))
    verdict(8, got == (2.0, -2.0, 1.0), f"sharpe, max drawdown, mape = {got}")


def test_c09_fee_economics(verdict):
    # dyadic prices and a 6.25 USD cap make every quantity exact: each fill is a maker fill
    # at the unchanged mid, and its rebate rounds the same way as notional * 0.0001
    n, mid, half_spread = 200, 100.0, 0.0625
    series = SnapshotSeries("FEE", [make_snapshot(ts=1000 * t, symbol="FEE", mid=mid, half_spread=0.125)
                                    for t in range(n)])
    trades = [TradeEvent(1000 * t + 500, "FEE", mid, 1.0, "buy") for t in range(n - 1)]

    class Alternating:
        warmup = 1

        def __call__(self, view):
            return mid - half_spread if len(view) % 2 else mid + half_spread

    cfg = StrategyConfig(quote_spread=2 * half_spread, max_side_notional=6.25, maker_fee_rate=-0.0001)
    res = run_backtest(series, trades, Alternating(), cfg)
    fills = [f for step in res.fills for f in step]
    rebates = np.array([f.price * f.qty * 0.0001 for step in res.fills for f in step])
    total, expected = total_pnl(res.pnl), total_pnl(rebates)
    ok = len(fills) == n - 1 and all(f.role == "maker" and f.price == mid for f in fills) and \
        (res.pnl == rebates).all() and total == expected
    verdict(9, bool(ok), f"{len(fills)} maker fills, total pnl {total!r} vs sum of notional*1e-4 {expected!r}")


def test_c10_btc_tape(verdict):
    path = os.environ.get("LOBFORGE_BTC_TAPE")
    if not path:
        pytest.skip("criterion 10: SKIP (set LOBFORGE_BTC_TAPE to a Kaggle BTC depth-50 JSONL tape)")
    series = load_tape(path, os.environ.get("LOBFORGE_BTC_SYMBOL"))
    epochs = int(os.environ.get("LOBFORGE_BTC_EPOCHS", "5"))
    scores = {}
    for repr_ in ("stacked", "merged"):
        spec = SampleSpec(frame_count=30, horizon_ms=1000, target_kind="delta", representation=repr_)
        n_train = int(0.8 * len(series))
        if spec.embed.needs_stats:
            head = series.between(None, int(series.ts[n_train - 1]))
            spec = replace(spec, embed=stats_for_training(head, spec.embed))
        samples = build_samples(series, spec)
        if len(samples) < BTC_MIN_SAMPLES:
            verdict(10, False, f"only {len(samples)} samples; need {BTC_MIN_SAMPLES}")
        train_set, test_set = split_by_time(samples, int(series.ts[n_train]))
        kind = "CNN2LSTM" if repr_ == "stacked" else "SimpleCNN_2D"
        m = M.build_model(M.arch_for(train_set, kind), seed=0)
        M.train(m, train_set, M.TrainConfig(epochs=epochs))
        scores[repr_] = mape(test_set.future_mid, M.predict(m, test_set))
        if repr_ == "stacked":
            persistence = mape(test_set.future_mid, test_set.anchor_mid)
    if scores["stacked"] > scores["merged"]:
        log.warning("soft check: stacked MAPE %.6f above merged %.6f", scores["stacked"], scores["merged"])
    verdict(10, scores["stacked"] < persistence,
            f"CNN2LSTM {scores['stacked']:.6f}% vs Persistence {persistence:.6f}%; merged {scores['merged']:.6f}%")


def _pipeline(workdir: Path):
    os.chdir(workdir)
    cfg = {"seed": 5, "sample": {"aggregation": "3w", "horizon_ms": 500},
           "synthetic": {"kind": "signal", "n": 600, "depth": 8}, "train": {"epochs": 2}}
    Path("run.json").write_text(json.dumps(cfg))
    steps = [
        ["synthetic", "--config", "run.json", "--out", "tape.jsonl.gz", "--trades-out", "trades.jsonl"],
        ["sample", "--config", "run.json", "tape.jsonl.gz", "--out", "train.lobs", "--test-out", "test.lobs"],
        ["train", "--config", "run.json", "--arch", "CNN2LSTM", "train.lobs", "--out", "model.lobm"],
        ["predict", "--config", "run.json", "model.lobm", "test.lobs", "--out", "forecast.csv"],
        ["backtest", "--config", "run.json", "model.lobm", "tape.jsonl.gz", "--trades", "trades.jsonl",
         "--out", "pnl.csv"],
    ]
    codes = [cli_main(argv) for argv in steps]
    return codes, {name: (workdir / name).read_bytes() for name in ("model.lobm", "forecast.csv", "pnl.csv")}


def test_c11_determinism(verdict, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runs = []
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        runs.append(_pipeline(tmp_path / name))
    (codes_a, files_a), (codes_b, files_b) = runs
    same = [k for k in files_a if files_a[k] == files_b[k]]
    ok = codes_a == codes_b == [0] * 5 and len(same) == len(files_a)
    verdict(11, ok, f"byte-identical: {', '.join(same)}")
