"""Run configuration: JSON file + command-line overrides, resolved into typed specs."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from . import __version__
from .backtest import StrategyConfig
from .embedding import EmbedConfig
from .errors import ConfigError
from .models import TrainConfig
from .sampling import SampleSpec, parse_aggregation

SCALING_NAMES = {"domain": "minmax_domain", "global": "minmax_global", "zscore": "zscore"}

DEFAULTS = {
    "seed": 0,
    "symbol": None,
    "from_ms": None,
    "to_ms": None,
    "threads": 1,
    "sample": {
        "aggregation": "30w",
        "horizon_ms": 1000,
        "target": "delta",
        "anchor": "last",
        "repr": "stacked",
        "features": 4,
        "scaling": "domain",
        "limit": None,
        "train_fraction": 0.8,
    },
    "arch": {"kind": "CNN2LSTM"},
    "train": {"epochs": 50, "batch": 32, "lr": 1e-3},
    "strategy": StrategyConfig().to_meta(),
    "synthetic": {"kind": "drift", "n": 1000, "depth": 50, "interval_ms": 250, "trades_per_step": 3,
                  "drift": 0.1, "noise": 0.02},
    "analyze": {"bucket_ms": 1000},
}

# open-ended sections accept keys not present in DEFAULTS
_OPEN_SECTIONS = {"arch"}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        path = f"{where}{key}"
        if key not in base and where.rstrip(".") not in _OPEN_SECTIONS:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return raw


def resolve(file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- dotted-key overrides (None values are ignored)."""
    cfg = _merge(DEFAULTS, file_cfg or {})
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    s = cfg["sample"]
    if s["scaling"] not in SCALING_NAMES:
        raise ConfigError(f"scaling must be one of {sorted(SCALING_NAMES)}, got {s['scaling']!r}")
    if s["features"] not in (4, 8):
        raise ConfigError(f"features must be 4 or 8, got {s['features']!r}")
    if not 0 < float(s["train_fraction"]) <= 1:
        raise ConfigError("train_fraction must lie in (0, 1]")
    parse_aggregation(s["aggregation"])
    StrategyConfig(**cfg["strategy"])


def embed_config(cfg: dict) -> EmbedConfig:
    s = cfg["sample"]
    return EmbedConfig(volume_scaling=SCALING_NAMES[s["scaling"]], feature_set=f"F{s['features']}")


def sample_spec(cfg: dict, nominal_interval_ms: int = 250) -> SampleSpec:
    s = cfg["sample"]
    aggregation, frames, interval_ms = parse_aggregation(s["aggregation"], None, nominal_interval_ms)
    return SampleSpec(aggregation=aggregation, frame_count=frames, interval_ms=interval_ms,
                      horizon_ms=int(s["horizon_ms"]), target_kind=s["target"], anchor=s["anchor"],
                      representation=s["repr"], embed=embed_config(cfg))


def strategy_config(cfg: dict) -> StrategyConfig:
    return StrategyConfig(**cfg["strategy"])


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(epochs=int(t["epochs"]), batch=int(t["batch"]), lr=float(t["lr"]), seed=cfg["seed"])


def provenance(command: str, cfg: dict, inputs: dict | None = None) -> dict:
    return {"tool": "lobforge", "version": __version__, "command": command,
            "seed": cfg["seed"], "config": cfg, "inputs": inputs or {}}
