"""``lobforge`` command line.

Every command accepts ``--config PATH`` (JSON) and flags that override
individual config keys. Each output artifact carries the resolved config and
seed. Failures exit with the error class's code (see ``lobforge.errors``).
"""
from __future__ import annotations

import argparse
import html
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .backtest import ModelPredictor, PersistencePredictor, run_backtest
from .book import load_tape, load_trades, write_tape, write_trades
from .embedding import embed_series, export_frame_png
from .errors import LobForgeError
from .metrics import bucket_volumes, fit_log_growth, mape, volume_correlation
from .models import arch_for, build_model, load_checkpoint, predict, save_checkpoint, train
from .sampling import (SampleSet, TargetScaler, build_samples, decode_prediction, split_by_time,
                       stats_for_training)
from .synthetic import generate_tape, generate_trades

log = logging.getLogger("lobforge")

IO_ERROR_EXIT = 3

# flag dest -> dotted config key
FLAG_KEYS = {
    "seed": "seed", "symbol": "symbol", "from_ms": "from_ms", "to_ms": "to_ms", "threads": "threads",
    "aggregation": "sample.aggregation", "horizon_ms": "sample.horizon_ms", "target": "sample.target",
    "repr": "sample.repr", "features": "sample.features", "scaling": "sample.scaling",
    "limit": "sample.limit", "train_fraction": "sample.train_fraction",
    "arch": "arch.kind", "epochs": "train.epochs", "batch": "train.batch", "lr": "train.lr",
    "kind": "synthetic.kind", "n": "synthetic.n", "depth": "synthetic.depth",
    "bucket_ms": "analyze.bucket_ms",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--symbol")
    p.add_argument("--from-ms", type=int, dest="from_ms")
    p.add_argument("--to-ms", type=int, dest="to_ms")
    p.add_argument("--aggregation", help="window 'Nw' or interval 'Ns'")
    p.add_argument("--horizon-ms", type=int, dest="horizon_ms")
    p.add_argument("--target", choices=["delta", "returns"])
    p.add_argument("--repr", choices=["stacked", "merged"])
    p.add_argument("--features", type=int, choices=[4, 8])
    p.add_argument("--scaling", choices=sorted(C.SCALING_NAMES))
    p.add_argument("--arch", choices=["SimpleCNN", "SimpleCNN_2D", "CNN2LSTM", "CNNModel_2D", "Persistence"])
    p.add_argument("--threads", type=int)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobforge", description="Order-book forecasting and market-making backtests")
    parser.add_argument("--version", action="version", version=f"lobforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic", help="write a deterministic synthetic tape (and trades)")
    _common(p)
    p.add_argument("--kind", choices=["flat", "drift", "meanrev", "signal"])
    p.add_argument("--n", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--trades-out", type=Path)

    p = sub.add_parser("ingest", help="validate, filter and normalise a raw JSONL tape")
    _common(p)
    p.add_argument("raw", type=Path)
    p.add_argument("--trades", type=Path, help="raw trade prints to normalise alongside")
    p.add_argument("--trades-out", type=Path)

    p = sub.add_parser("embed", help="export embedded frames as PNG images")
    _common(p)
    p.add_argument("tape", type=Path)
    p.add_argument("--max-frames", type=int, default=100)
    p.add_argument("--clamp", action="store_true", help="clip values outside [0, 255]")

    p = sub.add_parser("sample", help="build train (and test) sample sets from a tape")
    _common(p)
    p.add_argument("tape", type=Path)
    p.add_argument("--test-out", type=Path)
    p.add_argument("--limit", type=int, help="cap on training samples (earliest kept)")
    p.add_argument("--train-fraction", type=float, dest="train_fraction")

    p = sub.add_parser("train", help="train a model on a sample set")
    _common(p)
    p.add_argument("samples", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("predict", help="forecast a sample set with a checkpoint")
    _common(p)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("samples", type=Path)

    p = sub.add_parser("backtest", help="replay the quoting strategy on a tape")
    _common(p)
    p.add_argument("checkpoint", help="model checkpoint, or 'persistence'")
    p.add_argument("tape", type=Path)
    p.add_argument("--trades", type=Path)

    p = sub.add_parser("analyze", help="correlation of traded-volume changes across symbols")
    _common(p)
    p.add_argument("trades", type=Path, nargs="+")
    p.add_argument("--bucket-ms", type=int, dest="bucket_ms")

    p = sub.add_parser("report", help="collect JSON summaries and figures into one HTML page")
    _common(p)
    p.add_argument("inputs", type=Path, nargs="+")
    return parser


def _resolve(args) -> dict:
    file_cfg = C.load_config(args.config) if args.config else None
    overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if hasattr(args, dest)}
    return C.resolve(file_cfg, overrides)


def _window(cfg):
    if cfg["from_ms"] is None and cfg["to_ms"] is None:
        return None
    return (cfg["from_ms"], cfg["to_ms"])


def _csv_with_header(body: str, prov: dict) -> str:
    return "# " + json.dumps(prov, sort_keys=True) + "\n" + body


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------------

def cmd_synthetic(args, cfg):
    s = cfg["synthetic"]
    series = generate_tape(s["kind"], n=s["n"], seed=cfg["seed"], depth=s["depth"],
                           symbol=cfg["symbol"] or "SYNUSD", interval_ms=s["interval_ms"],
                           drift=s["drift"], noise=s["noise"])
    prov = C.provenance("synthetic", cfg)
    write_tape(args.out, series, prov)
    if args.trades_out:
        trades = generate_trades(series, seed=cfg["seed"] + 1, per_step=s["trades_per_step"])
        write_trades(args.trades_out, trades, prov)
    return {"snapshots": len(series)}


def cmd_ingest(args, cfg):
    series = load_tape(args.raw, cfg["symbol"], _window(cfg))
    prov = C.provenance("ingest", cfg, {"raw": str(args.raw)})
    write_tape(args.out, series, prov)
    out = {"snapshots": len(series), "symbol": series.symbol, "nominal_interval_ms": series.nominal_interval_ms}
    if args.trades:
        trades = load_trades(args.trades, series.symbol, _window(cfg))
        write_trades(args.trades_out or args.out.with_name(args.out.name + ".trades.jsonl"), trades, prov)
        out["trades"] = len(trades)
    return out


def cmd_embed(args, cfg):
    series = load_tape(args.tape, cfg["symbol"], _window(cfg))
    ecfg = C.embed_config(cfg)
    if ecfg.needs_stats:
        ecfg = stats_for_training(series, ecfg)
    n = min(args.max_frames, len(series))
    frames = embed_series(series, ecfg)[:n]
    args.out.mkdir(parents=True, exist_ok=True)
    prov = C.provenance("embed", cfg, {"tape": str(args.tape)})
    for i in range(n):
        export_frame_png(frames[i], args.out / f"frame_{i:05d}_{series.ts[i]}.png", clamp=args.clamp,
                         metadata=prov)
    return {"frames": n}


def cmd_sample(args, cfg):
    series = load_tape(args.tape, cfg["symbol"], _window(cfg))
    spec = C.sample_spec(cfg, series.nominal_interval_ms)
    frac = float(cfg["sample"]["train_fraction"])
    n_train = len(series) if frac >= 1 else int(len(series) * frac)
    if spec.embed.needs_stats:
        head = series.between(None, int(series.ts[max(n_train - 1, 0)]))
        spec = replace(spec, embed=stats_for_training(head, spec.embed))
    samples = build_samples(series, spec)
    if frac < 1:
        train_set, test_set = split_by_time(samples, int(series.ts[n_train]))
    else:
        train_set, test_set = samples, None
    limit = cfg["sample"]["limit"]
    if limit is not None:
        train_set = train_set.head(int(limit))
    scaler = TargetScaler.fit(train_set.target)
    prov = C.provenance("sample", cfg, {"tape": str(args.tape)})
    train_set.with_scaler(scaler).save(args.out, prov)
    out = {"train": len(train_set), "spec": spec.label}
    if test_set is not None and args.test_out:
        test_set.with_scaler(scaler).save(args.test_out, prov)
        out["test"] = len(test_set)
    return out


def cmd_train(args, cfg):
    samples = SampleSet.load(args.samples)
    kind = cfg["arch"]["kind"]
    overrides = {k: v for k, v in cfg["arch"].items() if k != "kind"}
    model = build_model(arch_for(samples, kind, **overrides), cfg["seed"])
    tcfg = C.train_config(cfg)
    model, history = train(model, samples, tcfg,
                           progress=lambda e, loss: log.info("epoch %d loss %.6g", e, loss))
    save_checkpoint(model, args.out, C.provenance("train", cfg, {"samples": str(args.samples)}))
    return {"arch": kind, "params": model.n_params, "epochs": len(history),
            "first_loss": history[0] if history else None, "final_loss": history[-1] if history else None}


def cmd_predict(args, cfg):
    model = load_checkpoint(args.checkpoint)
    samples = SampleSet.load(args.samples)
    forecast = predict(model, samples)
    kind = samples.spec.target_kind
    persistence = decode_prediction(np.zeros_like(samples.anchor_mid), samples.anchor_mid, kind)
    rows = ["t_anchor_ms,t_target_ms,symbol,asset,anchor_mid,forecast,actual"]
    for i in range(len(samples)):
        for k in range(samples.n_targets):
            sym = samples.symbols[k] if samples.oneshot else samples.symbols[samples.symbol_idx[i]]
            rows.append(f"{samples.t_anchor[i]},{samples.t_target[i]},{sym},{k},"
                        f"{samples.anchor_mid[i, k]!r},{float(forecast[i, k])!r},{samples.future_mid[i, k]!r}")
    prov = C.provenance("predict", cfg, {"checkpoint": str(args.checkpoint), "samples": str(args.samples)})
    args.out.write_text(_csv_with_header("\n".join(rows) + "\n", prov), encoding="utf-8")
    m = mape(samples.future_mid, forecast)
    mp = mape(samples.future_mid, persistence)
    summary = {"mape_pct": m, "mape_bps": m * 100, "persistence_mape_pct": mp,
               "persistence_mape_bps": mp * 100, "n_samples": len(samples), "provenance": prov}
    _write_json(args.out.with_suffix(".json"), summary)
    return {k: v for k, v in summary.items() if k != "provenance"}


def cmd_backtest(args, cfg):
    series = load_tape(args.tape, cfg["symbol"], _window(cfg))
    if str(args.checkpoint).lower() == "persistence":
        predictor = PersistencePredictor()
    else:
        predictor = ModelPredictor(load_checkpoint(args.checkpoint))
    trades = load_trades(args.trades, series.symbol, _window(cfg)) if args.trades else []
    result = run_backtest(series, trades, predictor, C.strategy_config(cfg))
    prov = C.provenance("backtest", cfg, {"checkpoint": str(args.checkpoint), "tape": str(args.tape),
                                          "trades": str(args.trades) if args.trades else None})
    args.out.write_text(_csv_with_header(result.to_csv(), prov), encoding="utf-8")
    args.out.with_suffix(".json").write_text(result.to_json({"provenance": prov}) + "\n", encoding="utf-8")
    from .plots import pnl_curve_svg

    curve = np.r_[result.initial_equity, result.equity]
    pnl_curve_svg(curve, args.out.with_suffix(".svg"), fit_log_growth(curve),
                  title=f"{series.symbol} equity", provenance=prov)
    return result.summary()


def cmd_analyze(args, cfg):
    by_symbol: dict = {}
    for path in args.trades:
        for t in load_trades(path, None, _window(cfg)):
            by_symbol.setdefault(t.symbol, []).append(t)
    start = min(t.ts_ms for ts in by_symbol.values() for t in ts) - 1
    end = max(t.ts_ms for ts in by_symbol.values() for t in ts)
    bucket = int(cfg["analyze"]["bucket_ms"])
    vols = {s: bucket_volumes(by_symbol[s], bucket, start, end) for s in sorted(by_symbol)}
    symbols, corr = volume_correlation(vols)
    prov = C.provenance("analyze", cfg, {"trades": [str(p) for p in args.trades]})
    lines = ["symbol," + ",".join(symbols)]
    lines += [s + "," + ",".join(repr(float(v)) for v in row) for s, row in zip(symbols, corr)]
    args.out.write_text(_csv_with_header("\n".join(lines) + "\n", prov), encoding="utf-8")
    from .plots import heatmap_svg

    heatmap_svg(symbols, corr, args.out.with_suffix(".svg"), provenance=prov)
    return {"symbols": symbols, "buckets": len(next(iter(vols.values())))}


def cmd_report(args, cfg):
    prov = C.provenance("report", cfg, {"inputs": [str(p) for p in args.inputs]})
    parts = ["<!DOCTYPE html>", "<html><head><meta charset='utf-8'><title>lobforge report</title>",
             f"<meta name='lobforge-provenance' content='{html.escape(json.dumps(prov, sort_keys=True))}'>",
             "</head><body><h1>lobforge report</h1>"]
    for path in args.inputs:
        parts.append(f"<h2>{html.escape(path.name)}</h2>")
        if path.suffix == ".json":
            doc = json.loads(path.read_text(encoding="utf-8"))
            metrics = doc.get("metrics", doc)
            parts.append("<table>")
            for k, v in sorted(metrics.items()):
                if k == "provenance":
                    continue
                parts.append(f"<tr><td>{html.escape(k)}</td><td>{html.escape(json.dumps(v))}</td></tr>")
            parts.append("</table>")
            fig = path.with_suffix(".svg")
            if fig.exists():
                parts.append(f"<img src='{html.escape(os.path.relpath(fig, args.out.parent))}'>")
        elif path.suffix == ".svg":
            parts.append(f"<img src='{html.escape(os.path.relpath(path, args.out.parent))}'>")
    parts.append("</body></html>")
    args.out.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return {"sections": len(args.inputs)}


COMMANDS = {
    "synthetic": cmd_synthetic, "ingest": cmd_ingest, "embed": cmd_embed, "sample": cmd_sample,
    "train": cmd_train, "predict": cmd_predict, "backtest": cmd_backtest, "analyze": cmd_analyze,
    "report": cmd_report,
}


def _setup_logging():
    level = os.environ.get("LOBFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg["threads"]):
            result = COMMANDS[args.command](args, cfg)
    except LobForgeError as e:
        print(f"lobforge {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"lobforge {args.command}: IoError: {e}", file=sys.stderr)
        return IO_ERROR_EXIT
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
