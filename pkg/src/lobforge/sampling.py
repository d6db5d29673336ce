"""Supervised samples from snapshot tapes.

Two aggregations build the input sequence of ``L`` frames:

* ``window`` rolls over consecutive snapshots with stride 1 (overlapping).
* ``interval`` groups snapshots into wall-clock buckets ``(kT, (k+1)T]``
  and keeps the last ``L`` of each (non-overlapping); a short bucket is
  front-padded with its earliest frame.

The target is taken from the first snapshot at or after
``t_anchor + horizon_ms``; samples whose horizon runs off the tape are
dropped.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .book import SnapshotSeries
from .embedding import EmbedConfig, GlobalStats, embed_arrays, merge_stacked
from .errors import (AlignmentGap, ConfigError, CorruptChecksum, FormatError, SeriesTooShort,
                     SpecMismatch, VersionMismatch)

HORIZONS_MS = (200, 1000, 5000, 10000, 30000, 60000)
WINDOW_GRID = (2, 3, 5, 10, 30)
INTERVAL_GRID_S = (1, 2, 3, 5, 10)
DEFAULT_TRAIN_SAMPLES = 5000

MAGIC = b"LOBS"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SampleSpec:
    aggregation: str = "window"  # "window" | "interval"
    frame_count: int = 30
    interval_ms: int = 0  # bucket width for interval aggregation
    horizon_ms: int = 1000
    target_kind: str = "delta"  # "delta" | "returns"
    anchor: str = "last"  # "last" | "first"
    representation: str = "stacked"  # "stacked" | "merged"
    embed: EmbedConfig = field(default_factory=EmbedConfig)

    def __post_init__(self):
        if self.aggregation not in ("window", "interval"):
            raise ConfigError(f"aggregation must be window or interval, got {self.aggregation!r}")
        if self.frame_count < 1:
            raise ConfigError("frame_count must be >= 1")
        if self.aggregation == "interval" and self.interval_ms <= 0:
            raise ConfigError("interval aggregation needs interval_ms > 0")
        if self.horizon_ms <= 0:
            raise ConfigError("horizon_ms must be positive")
        if self.target_kind not in ("delta", "returns"):
            raise ConfigError(f"target_kind must be delta or returns, got {self.target_kind!r}")
        if self.anchor not in ("last", "first"):
            raise ConfigError(f"anchor must be last or first, got {self.anchor!r}")
        if self.representation not in ("stacked", "merged"):
            raise ConfigError(f"representation must be stacked or merged, got {self.representation!r}")

    @property
    def label(self) -> str:
        if self.aggregation == "window":
            return f"{self.frame_count}w"
        return f"{self.interval_ms / 1000:g}s"

    def to_meta(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "frame_count": self.frame_count,
            "interval_ms": self.interval_ms,
            "horizon_ms": self.horizon_ms,
            "target_kind": self.target_kind,
            "anchor": self.anchor,
            "representation": self.representation,
            "embed": self.embed.to_meta(),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "SampleSpec":
        meta = dict(meta)
        meta["embed"] = EmbedConfig.from_meta(meta["embed"])
        return cls(**meta)


def parse_aggregation(text: str, frames: int | None = None, nominal_interval_ms: int = 250):
    """``"30w"`` -> window of 30; ``"5s"`` -> 5 s buckets.

    Returns ``(aggregation, frame_count, interval_ms)``. For buckets the frame
    count defaults to the number of snapshots expected per bucket.
    """
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([ws])\s*", text or "")
    if not m:
        raise ConfigError(f"aggregation must look like '30w' or '5s', got {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if unit == "w":
        if value != int(value) or value < 1:
            raise ConfigError(f"window length must be a positive integer, got {text!r}")
        return "window", int(value), 0
    interval_ms = int(round(value * 1000))
    if interval_ms <= 0:
        raise ConfigError(f"interval must be positive, got {text!r}")
    if frames is None:
        frames = max(1, int(round(interval_ms / max(nominal_interval_ms, 1))))
    return "interval", int(frames), interval_ms


# -- targets -------------------------------------------------------------------

def make_target(anchor_mid, future_mid, kind: str):
    if kind == "delta":
        return future_mid - anchor_mid
    if kind == "returns":
        return future_mid / anchor_mid - 1.0
    raise ConfigError(f"unknown target kind {kind!r}")


def decode_prediction(pred, anchor_mid, kind: str):
    if kind == "delta":
        return anchor_mid + pred
    if kind == "returns":
        return anchor_mid * (1.0 + pred)
    raise ConfigError(f"unknown target kind {kind!r}")


@dataclass(frozen=True)
class TargetScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, k: int = 1) -> "TargetScaler":
        return cls(np.zeros(k), np.ones(k))

    @classmethod
    def fit(cls, targets) -> "TargetScaler":
        t = np.asarray(targets, dtype=np.float64)
        if t.ndim == 1:
            t = t[:, None]
        if t.shape[0] < 2:
            return cls.identity(t.shape[1])
        mean = t.mean(axis=0)
        std = t.std(axis=0)
        flat = ~(std > 0)
        # constant columns pass through untouched
        mean = np.where(flat, 0.0, mean)
        std = np.where(flat, 1.0, std)
        return cls(mean, std)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_meta(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_meta(cls, meta: dict | None) -> "TargetScaler | None":
        if meta is None:
            return None
        return cls(np.asarray(meta["mean"], dtype=np.float64), np.asarray(meta["std"], dtype=np.float64))


def fit_target_scaler(train: "SampleSet") -> TargetScaler:
    return TargetScaler.fit(train.target)


# -- sample containers ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sample:
    input: np.ndarray
    anchor_mid: float | np.ndarray
    target: float | np.ndarray
    t_anchor_ms: int
    t_target_ms: int
    true_future_mid: float | np.ndarray
    symbol: str = ""


@dataclass(eq=False)
class SampleSet:
    """Column-oriented sample storage.

    ``inputs`` is always kept stacked, ``(N, L, D, C)`` float32; the merged
    view is derived on demand. Target-like arrays are ``(N, K)`` with K = 1,
    or 2 for one-shot pairs.
    """

    spec: SampleSpec
    inputs: np.ndarray
    anchor_mid: np.ndarray
    target: np.ndarray
    future_mid: np.ndarray
    t_first: np.ndarray
    t_anchor: np.ndarray
    t_target: np.ndarray
    symbols: tuple = ()
    symbol_idx: np.ndarray | None = None
    target_scaler: TargetScaler | None = None
    split: str = "all"
    oneshot: bool = False
    nominal_interval_ms: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.symbol_idx is None:
            self.symbol_idx = np.zeros(n, dtype=np.int64)
        for name in ("anchor_mid", "target", "future_mid"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            k = arr.shape[1] if arr.ndim == 2 else 1
            setattr(self, name, arr.reshape(n, k) if n == 0 else arr.reshape(n, -1))
        self.symbols = tuple(self.symbols)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, i: int) -> Sample:
        k = self.target.shape[1]

        def pick(a):
            return float(a[i, 0]) if k == 1 else a[i].copy()

        sym = "+".join(self.symbols) if self.oneshot else self.symbols[self.symbol_idx[i]]
        x = self.inputs[i]
        if self.spec.representation == "merged":
            x = merge_stacked(x)
        return Sample(x, pick(self.anchor_mid), pick(self.target),
                      int(self.t_anchor[i]), int(self.t_target[i]), pick(self.future_mid), sym)

    @property
    def n_targets(self) -> int:
        return self.target.shape[1]

    def model_inputs(self, representation: str | None = None) -> np.ndarray:
        rep = representation or self.spec.representation
        return self.inputs if rep == "stacked" else merge_stacked(self.inputs)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return replace(
            self,
            inputs=self.inputs[idx], anchor_mid=self.anchor_mid[idx], target=self.target[idx],
            future_mid=self.future_mid[idx], t_first=self.t_first[idx],
            t_anchor=self.t_anchor[idx], t_target=self.t_target[idx],
            symbol_idx=self.symbol_idx[idx], meta=dict(self.meta),
        )

    def head(self, n: int) -> "SampleSet":
        return self.subset(np.arange(min(n, len(self))))

    def with_scaler(self, scaler: TargetScaler | None) -> "SampleSet":
        return replace(self, target_scaler=scaler)

    # -- binary container --------------------------------------------------

    def _record_dtype(self) -> np.dtype:
        _, L, D, C = self.inputs.shape
        k = self.n_targets
        return np.dtype([
            ("input", "<f4", (L, D, C)),
            ("anchor_mid", "<f8", (k,)),
            ("target", "<f8", (k,)),
            ("future_mid", "<f8", (k,)),
            ("ts", "<i8", (3,)),
        ])

    def header_meta(self, provenance: dict | None = None) -> dict:
        _, L, D, C = self.inputs.shape
        meta = {
            "spec": self.spec.to_meta(),
            "target_scaler": None if self.target_scaler is None else self.target_scaler.to_meta(),
            "split": self.split,
            "count": len(self),
            "input_shape": [L, D, C],
            "n_targets": self.n_targets,
            "symbols": list(self.symbols),
            "symbol_idx": self.symbol_idx.tolist(),
            "oneshot": self.oneshot,
            "nominal_interval_ms": self.nominal_interval_ms,
            "record_layout": "input f32[L,D,C], anchor_mid f64[K], target f64[K], "
                             "future_mid f64[K], ts i64[first, anchor, target]",
            "extra": self.meta,
        }
        if provenance is not None:
            meta["provenance"] = provenance
        return meta

    def to_bytes(self, provenance: dict | None = None) -> bytes:
        blob = json.dumps(self.header_meta(provenance), sort_keys=True).encode("utf-8")
        rec = np.empty(len(self), dtype=self._record_dtype())
        rec["input"] = self.inputs
        rec["anchor_mid"] = self.anchor_mid
        rec["target"] = self.target
        rec["future_mid"] = self.future_mid
        rec["ts"] = np.stack([self.t_first, self.t_anchor, self.t_target], axis=1)
        return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(blob)) + blob + rec.tobytes()

    def save(self, path, provenance: dict | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(provenance))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SampleSet":
        if raw[:4] != MAGIC:
            raise FormatError("not a sample-set file (bad magic)")
        if len(raw) < 10:
            raise CorruptChecksum("truncated header")
        version, n_meta = struct.unpack_from("<HI", raw, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"sample-set version {version} not supported (expected {FORMAT_VERSION})")
        try:
            meta = json.loads(raw[10:10 + n_meta].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise CorruptChecksum("unreadable metadata block") from None
        L, D, C = meta["input_shape"]
        k = meta["n_targets"]
        n = meta["count"]
        dtype = np.dtype([
            ("input", "<f4", (L, D, C)), ("anchor_mid", "<f8", (k,)), ("target", "<f8", (k,)),
            ("future_mid", "<f8", (k,)), ("ts", "<i8", (3,)),
        ])
        body = raw[10 + n_meta:]
        if len(body) != n * dtype.itemsize:
            raise CorruptChecksum(f"expected {n} records ({n * dtype.itemsize} bytes), found {len(body)} bytes")
        rec = np.frombuffer(body, dtype=dtype, count=n)
        return cls(
            spec=SampleSpec.from_meta(meta["spec"]),
            inputs=np.array(rec["input"], dtype=np.float32).reshape(n, L, D, C),
            anchor_mid=np.array(rec["anchor_mid"]),
            target=np.array(rec["target"]),
            future_mid=np.array(rec["future_mid"]),
            t_first=np.array(rec["ts"][:, 0]),
            t_anchor=np.array(rec["ts"][:, 1]),
            t_target=np.array(rec["ts"][:, 2]),
            symbols=tuple(meta["symbols"]),
            symbol_idx=np.asarray(meta["symbol_idx"], dtype=np.int64),
            target_scaler=TargetScaler.from_meta(meta["target_scaler"]),
            split=meta["split"],
            oneshot=meta["oneshot"],
            nominal_interval_ms=meta["nominal_interval_ms"],
            meta=meta.get("extra", {}),
        )

    @classmethod
    def load(cls, path) -> "SampleSet":
        return cls.from_bytes(Path(path).read_bytes())


# -- samplers ------------------------------------------------------------------

def _check_horizon(series: SnapshotSeries, spec: SampleSpec) -> None:
    if series.nominal_interval_ms and spec.horizon_ms < series.nominal_interval_ms:
        raise ConfigError(
            f"horizon {spec.horizon_ms} ms is shorter than the tape's snapshot interval "
            f"({series.nominal_interval_ms} ms)")


def _frames_for(series: SnapshotSeries, spec: SampleSpec, stop: int) -> np.ndarray:
    """Embedded frames ``[0, stop)``; later snapshots are never touched."""
    stats = spec.embed.stats_for(series.symbol)
    return embed_arrays(series.asks[:stop], series.bids[:stop], spec.embed, stats).astype(np.float32)


def _assemble(series, spec, frames, windows, last_idx, split, extra) -> SampleSet:
    ts, mids = series.ts, series.mids
    target_idx = np.searchsorted(ts, ts[last_idx] + spec.horizon_ms, side="left")
    keep = target_idx < len(ts)
    windows, last_idx, target_idx = windows[keep], last_idx[keep], target_idx[keep]
    if len(last_idx) == 0:
        raise SeriesTooShort(f"no sample has its {spec.horizon_ms} ms horizon inside the tape")
    first_idx = windows[:, 0]
    anchor_idx = last_idx if spec.anchor == "last" else first_idx
    anchor_mid = mids[anchor_idx]
    future = mids[target_idx]
    return SampleSet(
        spec=spec,
        inputs=frames[windows],
        anchor_mid=anchor_mid,
        target=make_target(anchor_mid, future, spec.target_kind),
        future_mid=future,
        t_first=ts[first_idx],
        t_anchor=ts[last_idx],
        t_target=ts[target_idx],
        symbols=(series.symbol,),
        split=split,
        nominal_interval_ms=series.nominal_interval_ms,
        meta=extra,
    )


def window_samples(series: SnapshotSeries, spec: SampleSpec, limit: int | None = None,
                   split: str = "all") -> SampleSet:
    """Overlapping samples: every index ``i >= L-1`` with frames ``[i-L+1, i]``.

    ``limit`` keeps the earliest samples (causal subsampling).
    """
    if spec.aggregation != "window":
        raise ConfigError("window_samples needs a window aggregation spec")
    L = spec.frame_count
    if len(series) < L + 1:
        raise SeriesTooShort(f"{len(series)} snapshots cannot form a window of {L} plus a target")
    _check_horizon(series, spec)
    last_idx = np.arange(L - 1, len(series))
    if limit is not None:
        last_idx = last_idx[:max(limit, 0)]
    windows = last_idx[:, None] + np.arange(-L + 1, 1)[None, :]
    frames = _frames_for(series, spec, int(windows.max()) + 1)
    return _assemble(series, spec, frames, windows, last_idx, split, {"sampler": "window"})


def bucket_index(ts: np.ndarray, interval_ms: int) -> np.ndarray:
    """Bucket k covers ``(k*T, (k+1)*T]``; border snapshots go to the earlier bucket."""
    ts = np.asarray(ts, dtype=np.int64)
    return -((-ts) // interval_ms) - 1


def interval_samples(series: SnapshotSeries, spec: SampleSpec, limit: int | None = None,
                     split: str = "all") -> SampleSet:
    if spec.aggregation != "interval":
        raise ConfigError("interval_samples needs an interval aggregation spec")
    _check_horizon(series, spec)
    L = spec.frame_count
    k = bucket_index(series.ts, spec.interval_ms)
    starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    ends = np.r_[starts[1:], len(k)] - 1
    if len(starts) < 2:
        raise SeriesTooShort("tape spans fewer than two aggregation intervals")
    empty = int(k[-1] - k[0] + 1 - len(starts))
    windows = np.empty((len(starts), L), dtype=np.int64)
    for b, (s, e) in enumerate(zip(starts, ends)):
        idx = np.arange(max(s, e - L + 1), e + 1)
        if len(idx) < L:
            idx = np.r_[np.full(L - len(idx), s), idx]
        windows[b] = idx
    if limit is not None:
        windows, ends = windows[:limit], ends[:limit]
    frames = _frames_for(series, spec, int(windows.max()) + 1)
    return _assemble(series, spec, frames, windows, ends, split,
                     {"sampler": "interval", "empty_buckets": empty, "buckets": int(len(starts))})


def build_samples(series: SnapshotSeries, spec: SampleSpec, limit: int | None = None,
                  split: str = "all") -> SampleSet:
    if spec.aggregation == "window":
        return window_samples(series, spec, limit, split)
    return interval_samples(series, spec, limit, split)


# -- splits and multi-asset sets ----------------------------------------------

def split_series(series: SnapshotSeries, train_fraction: float):
    """Cut a tape in time; the second part starts strictly after the first ends."""
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must be in (0, 1)")
    n = int(len(series) * train_fraction)
    if n < 1 or n >= len(series):
        raise SeriesTooShort("tape too short to split")
    head = SnapshotSeries(series.symbol, series.snapshots[:n], series.nominal_interval_ms)
    tail = SnapshotSeries(series.symbol, series.snapshots[n:], series.nominal_interval_ms)
    return head, tail


def split_by_time(samples: SampleSet, cut_ms: int):
    """Train keeps samples whose target precedes ``cut_ms``; test keeps those
    whose first frame is at or after it. Straddling samples are purged."""
    train = samples.subset(np.flatnonzero(samples.t_target < cut_ms))
    test = samples.subset(np.flatnonzero(samples.t_first >= cut_ms))
    train.split, test.split = "train", "test"
    return train, test


def _spec_key(spec: SampleSpec) -> dict:
    meta = spec.to_meta()
    meta["embed"] = {k: v for k, v in meta["embed"].items() if k != "global_stats"}
    return meta


def _merged_embed(sets: Sequence[SampleSet]) -> EmbedConfig:
    cfg = sets[0].spec.embed
    for s in sets[1:]:
        for sym, st in s.spec.embed.global_stats.items():
            cfg = cfg.with_stats(sym, st)
    return cfg


def union_sets(sets: Sequence[SampleSet]) -> SampleSet:
    """Mixed training set: time-ordered union with per-sample symbol tags."""
    if not sets:
        raise SpecMismatch("nothing to merge")
    key = _spec_key(sets[0].spec)
    for s in sets[1:]:
        if _spec_key(s.spec) != key:
            raise SpecMismatch("sample sets differ in more than their symbol")
        if s.inputs.shape[1:] != sets[0].inputs.shape[1:] or s.n_targets != 1 or s.oneshot:
            raise SpecMismatch("sample sets have incompatible input shapes or targets")
    symbols: list[str] = []
    for s in sets:
        for sym in s.symbols:
            if sym not in symbols:
                symbols.append(sym)
    sym_idx = np.concatenate([
        np.asarray([symbols.index(s.symbols[i]) for i in s.symbol_idx], dtype=np.int64)
        for s in sets])

    def cat(name):
        return np.concatenate([getattr(s, name) for s in sets])

    t_anchor = cat("t_anchor")
    order = np.lexsort((sym_idx, t_anchor))
    out = SampleSet(
        spec=replace(sets[0].spec, embed=_merged_embed(sets)),
        inputs=cat("inputs")[order], anchor_mid=cat("anchor_mid")[order], target=cat("target")[order],
        future_mid=cat("future_mid")[order], t_first=cat("t_first")[order], t_anchor=t_anchor[order],
        t_target=cat("t_target")[order], symbols=tuple(symbols), symbol_idx=sym_idx[order],
        split=sets[0].split, nominal_interval_ms=max(s.nominal_interval_ms for s in sets),
        meta={"mixed": True},
    )
    return out


def pair_oneshot(a: SampleSet, b: SampleSet, tolerance_ms: int | None = None,
                 max_unmatched: float = 0.10) -> SampleSet:
    """Join two single-asset sets on anchor time; inputs gain ``2L`` channels."""
    if _spec_key(a.spec) != _spec_key(b.spec):
        raise SpecMismatch("one-shot pairing needs identical sample specs")
    if a.inputs.shape[1:] != b.inputs.shape[1:] or a.n_targets != 1 or b.n_targets != 1:
        raise SpecMismatch("one-shot pairing needs single-target sets of equal input shape")
    if tolerance_ms is None:
        tolerance_ms = max(a.nominal_interval_ms, b.nominal_interval_ms) // 2
    pos = np.searchsorted(b.t_anchor, a.t_anchor)
    lo = np.clip(pos - 1, 0, len(b) - 1)
    hi = np.clip(pos, 0, len(b) - 1)
    d_lo = np.abs(b.t_anchor[lo] - a.t_anchor)
    d_hi = np.abs(b.t_anchor[hi] - a.t_anchor)
    nearest = np.where(d_hi < d_lo, hi, lo)
    ok = np.minimum(d_lo, d_hi) <= tolerance_ms
    unmatched = 1.0 - ok.mean() if len(a) else 1.0
    if unmatched > max_unmatched:
        raise AlignmentGap(f"{unmatched:.1%} of samples have no partner within {tolerance_ms} ms")
    ia = np.flatnonzero(ok)
    ib = nearest[ok]
    return SampleSet(
        spec=replace(a.spec, embed=_merged_embed([a, b])),
        inputs=np.concatenate([a.inputs[ia], b.inputs[ib]], axis=1),
        anchor_mid=np.hstack([a.anchor_mid[ia], b.anchor_mid[ib]]),
        target=np.hstack([a.target[ia], b.target[ib]]),
        future_mid=np.hstack([a.future_mid[ia], b.future_mid[ib]]),
        t_first=np.minimum(a.t_first[ia], b.t_first[ib]),
        t_anchor=a.t_anchor[ia],
        t_target=np.maximum(a.t_target[ia], b.t_target[ib]),
        symbols=(a.symbols[0], b.symbols[0]),
        split=a.split, oneshot=True,
        nominal_interval_ms=max(a.nominal_interval_ms, b.nominal_interval_ms),
        meta={"unmatched_fraction": float(unmatched)},
    )


def stats_for_training(series: SnapshotSeries, cfg: EmbedConfig) -> EmbedConfig:
    """Attach global quantity stats computed on (training) ``series``."""
    return cfg.with_stats(series.symbol, GlobalStats.from_series(series))
