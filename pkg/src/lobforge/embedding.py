"""Turn book snapshots into image-like frames.

A frame is a ``D x C`` matrix. Prices are rescaled relative to the
snapshot's own mid so the deepest level on each side maps to 1; quantities
use one of three scalings. With ``quantize_255`` every column is multiplied
by 255 (kept as reals; rounding happens only at PNG export).

Column layouts::

    F4: ask_price, ask_vol, bid_price, bid_vol
    F8: F4 + ask_vol_global, ask_bin_width, bid_vol_global, bid_bin_width
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .book import LobSnapshot, SnapshotSeries, mid_price
from .errors import ConfigError, DegenerateLadder, MissingStats, OutOfRange, ShapeMismatch, ZeroVariance

COLUMN_LAYOUT_VERSION = 1
SCALINGS = ("zscore", "minmax_global", "minmax_domain")
FEATURE_SETS = {"F4": 4, "F8": 8}
COLUMNS = {
    "F4": ("ask_price", "ask_vol", "bid_price", "bid_vol"),
    "F8": ("ask_price", "ask_vol", "bid_price", "bid_vol",
           "ask_vol_global", "ask_bin_width", "bid_vol_global", "bid_bin_width"),
}


@dataclass(frozen=True)
class GlobalStats:
    """Quantity statistics over a training sample (both book sides pooled)."""

    min: float
    max: float
    mean: float
    std: float

    @classmethod
    def from_quantities(cls, q) -> "GlobalStats":
        q = np.asarray(q, dtype=np.float64).ravel()
        if q.size == 0:
            raise MissingStats("cannot compute stats from an empty sample")
        return cls(float(q.min()), float(q.max()), float(q.mean()), float(q.std()))

    @classmethod
    def from_series(cls, series: SnapshotSeries, until_ms: int | None = None) -> "GlobalStats":
        keep = slice(None) if until_ms is None else series.ts <= until_ms
        q = np.concatenate([series.asks[keep, :, 1].ravel(), series.bids[keep, :, 1].ravel()])
        return cls.from_quantities(q)


@dataclass(frozen=True)
class EmbedConfig:
    volume_scaling: str = "minmax_domain"
    feature_set: str = "F4"
    quantize_255: bool = True
    # symbol -> stats; fitted on the training split only
    global_stats: Mapping[str, GlobalStats] = field(default_factory=dict)

    def __post_init__(self):
        if self.volume_scaling not in SCALINGS:
            raise ConfigError(f"volume_scaling must be one of {SCALINGS}, got {self.volume_scaling!r}")
        if self.feature_set not in FEATURE_SETS:
            raise ConfigError(f"feature_set must be F4 or F8, got {self.feature_set!r}")
        object.__setattr__(self, "global_stats", dict(self.global_stats))

    @property
    def n_columns(self) -> int:
        return FEATURE_SETS[self.feature_set]

    @property
    def needs_stats(self) -> bool:
        return self.volume_scaling != "minmax_domain" or self.feature_set == "F8"

    def stats_for(self, symbol: str) -> GlobalStats | None:
        return self.global_stats.get(symbol)

    def with_stats(self, symbol: str, stats: GlobalStats) -> "EmbedConfig":
        merged = dict(self.global_stats)
        merged[symbol] = stats
        return EmbedConfig(self.volume_scaling, self.feature_set, self.quantize_255, merged)

    def to_meta(self) -> dict:
        return {
            "volume_scaling": self.volume_scaling,
            "feature_set": self.feature_set,
            "quantize_255": self.quantize_255,
            "global_stats": {k: asdict(v) for k, v in sorted(self.global_stats.items())},
            "column_layout_version": COLUMN_LAYOUT_VERSION,
            "columns": list(COLUMNS[self.feature_set]),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "EmbedConfig":
        version = meta.get("column_layout_version", COLUMN_LAYOUT_VERSION)
        if version != COLUMN_LAYOUT_VERSION:
            raise ConfigError(f"unsupported column layout version {version}")
        stats = {k: GlobalStats(**v) for k, v in meta.get("global_stats", {}).items()}
        return cls(meta["volume_scaling"], meta["feature_set"], bool(meta["quantize_255"]), stats)


@dataclass(frozen=True, eq=False)
class FrameMatrix:
    data: np.ndarray  # (D, C)
    anchor_mid: float
    ts_ms: int

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


# -- scalings ----------------------------------------------------------------

def _scale_price_arrays(ask_px: np.ndarray, bid_px: np.ndarray):
    """Batched price scaling; inputs are ``(..., D)`` ladders."""
    mid = 0.5 * (ask_px[..., :1] + bid_px[..., :1])
    ask_span = ask_px[..., -1:] - mid
    bid_span = bid_px[..., -1:] - mid
    if (ask_span <= 0).any() or (bid_span >= 0).any():
        raise DegenerateLadder("deepest level coincides with the mid")
    return (ask_px - mid) / ask_span, (bid_px - mid) / bid_span


def scale_prices(s: LobSnapshot) -> tuple[np.ndarray, np.ndarray]:
    """Scale both ladders into ``(0, 1]`` relative to the snapshot mid."""
    return _scale_price_arrays(s.asks[:, 0], s.bids[:, 0])


def scale_quantities(q, mode: str, stats: GlobalStats | None = None) -> np.ndarray:
    """Scale one side's quantities.

    ``minmax_domain`` uses the side's own min/max (a flat side maps to
    zeros); ``minmax_global`` and ``zscore`` need ``stats``. Accepts a
    ``(..., D)`` array; the domain is always the last axis.
    """
    q = np.asarray(q, dtype=np.float64)
    if mode == "minmax_domain":
        lo = q.min(axis=-1, keepdims=True)
        span = q.max(axis=-1, keepdims=True) - lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (q - lo) / safe, 0.0)
    if mode not in SCALINGS:
        raise ConfigError(f"unknown volume scaling {mode!r}")
    if stats is None:
        raise MissingStats(f"{mode} scaling requires global stats")
    if mode == "zscore":
        if not stats.std > 0:
            raise ZeroVariance("z-score scaling with zero standard deviation")
        return (q - stats.mean) / stats.std
    if not stats.max > stats.min:
        raise ZeroVariance("global min-max scaling with MAX == MIN")
    return (q - stats.min) / (stats.max - stats.min)


def bin_widths(prices_scaled, side: str = "ask") -> np.ndarray:
    """Gaps between consecutive scaled price levels; the last gap repeats.

    ``side`` is accepted for symmetry; both sides use the same rule because
    scaled prices increase away from the mid on either side.
    """
    p = np.asarray(prices_scaled, dtype=np.float64)
    if p.shape[-1] == 1:
        return np.zeros_like(p)
    gaps = np.abs(np.diff(p, axis=-1))
    return np.concatenate([gaps, gaps[..., -1:]], axis=-1)


def embed_arrays(asks: np.ndarray, bids: np.ndarray, cfg: EmbedConfig,
                 stats: GlobalStats | None = None) -> np.ndarray:
    """Embed ``(T, D, 2)`` ladders into ``(T, D, C)`` float64 frames."""
    if cfg.needs_stats and stats is None:
        raise MissingStats(f"{cfg.volume_scaling}/{cfg.feature_set} embedding requires global stats")
    ask_p, bid_p = _scale_price_arrays(asks[..., 0], bids[..., 0])
    cols = [
        ask_p,
        scale_quantities(asks[..., 1], cfg.volume_scaling, stats),
        bid_p,
        scale_quantities(bids[..., 1], cfg.volume_scaling, stats),
    ]
    if cfg.feature_set == "F8":
        cols += [
            scale_quantities(asks[..., 1], "minmax_global", stats),
            bin_widths(ask_p),
            scale_quantities(bids[..., 1], "minmax_global", stats),
            bin_widths(bid_p),
        ]
    out = np.stack(cols, axis=-1)
    if cfg.quantize_255:
        out *= 255.0
    return out


def embed_snapshot(s: LobSnapshot, cfg: EmbedConfig) -> FrameMatrix:
    data = embed_arrays(s.asks[None], s.bids[None], cfg, cfg.stats_for(s.symbol))[0]
    return FrameMatrix(data, mid_price(s), s.ts_ms)


def embed_series(series: SnapshotSeries, cfg: EmbedConfig) -> np.ndarray:
    """All frames of a series at once, ``(T, D, C)``; identical to per-snapshot embedding."""
    return embed_arrays(series.asks, series.bids, cfg, cfg.stats_for(series.symbol))


# -- aggregation -------------------------------------------------------------

def _frame_data(frames) -> list[np.ndarray]:
    return [f.data if isinstance(f, FrameMatrix) else np.asarray(f) for f in frames]


def stack_frames(frames: Sequence) -> np.ndarray:
    """``L`` frames of ``D x C`` -> ``L x D x C``; channel j is frame j."""
    data = _frame_data(frames)
    if not data:
        raise ShapeMismatch("no frames to stack")
    shape = data[0].shape
    for d in data:
        if d.ndim != 2 or d.shape != shape:
            raise ShapeMismatch(f"frame shape {d.shape} != {shape}")
    return np.stack(data)


def merge_stacked(stacked: np.ndarray) -> np.ndarray:
    """``(..., L, D, C)`` -> ``(..., D, C*L)`` with frame j in columns ``[jC, (j+1)C)``."""
    *lead, L, D, C = stacked.shape
    return np.swapaxes(stacked, -3, -2).reshape(*lead, D, L * C)


def unmerge(merged: np.ndarray, n_columns: int) -> np.ndarray:
    *lead, D, LC = merged.shape
    L = LC // n_columns
    return np.swapaxes(merged.reshape(*lead, D, L, n_columns), -3, -2)


def merge_frames(frames: Sequence) -> np.ndarray:
    return merge_stacked(stack_frames(frames))


# -- image export ------------------------------------------------------------

def export_frame_png(image, path, clamp: bool = False, metadata: dict | None = None) -> None:
    """Write a 2-D matrix as an 8-bit grayscale PNG (round half to even)."""
    from PIL import Image
    from PIL.PngImagePlugin import PngInfo

    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {img.shape}")
    if clamp:
        img = np.clip(img, 0.0, 255.0)
    elif img.size and (img.min() < 0 or img.max() > 255 or not np.isfinite(img).all()):
        raise OutOfRange(f"values outside [0, 255] (min {img.min()}, max {img.max()}); pass clamp=True")
    pixels = np.rint(img).astype(np.uint8)
    info = None
    if metadata is not None:
        info = PngInfo()
        info.add_text("lobforge", json.dumps(metadata, sort_keys=True))
    Image.fromarray(pixels, mode="L").save(Path(path), pnginfo=info)
