"""Deterministic synthetic order-book tapes and trade prints.

Kinds:

* ``flat``: a constant book.
* ``drift``: the mid moves by ``drift`` every snapshot plus gaussian noise.
* ``meanrev``: an Ornstein-Uhlenbeck mid around ``base_price``.
* ``signal``: the mid drifts up or down in persistent regimes, and the
  regime is visible in the shape of the volume ladders (bid volume is
  front-loaded in up regimes, ask volume in down regimes).
"""
from __future__ import annotations

import numpy as np

from .book import LobSnapshot, SnapshotSeries, TradeEvent
from .errors import ConfigError

KINDS = ("flat", "drift", "meanrev", "signal")


def _mid_path(kind, n, rng, base_price, drift, noise, regime_switch):
    if kind == "flat":
        return np.full(n, base_price), np.zeros(n, dtype=np.int8)
    if kind == "drift":
        steps = drift + noise * rng.standard_normal(n - 1)
        return base_price + np.r_[0.0, np.cumsum(steps)], np.ones(n, dtype=np.int8)
    if kind == "meanrev":
        mid = np.empty(n)
        mid[0] = base_price
        eps = rng.standard_normal(n)
        for t in range(1, n):
            mid[t] = mid[t - 1] + 0.05 * (base_price - mid[t - 1]) + noise * eps[t]
        return mid, np.zeros(n, dtype=np.int8)
    if kind == "signal":
        flips = rng.random(n) < regime_switch
        regime = np.where(np.cumsum(flips) % 2 == 0, 1, -1).astype(np.int8)
        steps = drift * regime[:-1] + noise * rng.standard_normal(n - 1)
        return base_price + np.r_[0.0, np.cumsum(steps)], regime
    raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")


def generate_tape(kind: str = "drift", n: int = 1000, seed: int = 0, depth: int = 50,
                  symbol: str = "SYNUSD", interval_ms: int = 250, start_ms: int = 1_700_000_000_000,
                  base_price: float = 100.0, tick: float = 0.01, half_spread: float = 0.05,
                  drift: float = 0.1, noise: float = 0.02, regime_switch: float = 0.02) -> SnapshotSeries:
    """A tape of ``n`` snapshots spaced ``interval_ms`` apart."""
    if n < 1 or depth < 1:
        raise ConfigError("n and depth must be positive")
    rng = np.random.default_rng(seed)
    mid, regime = _mid_path(kind, n, rng, base_price, drift, noise, regime_switch)
    if (mid - half_spread - depth * tick <= 0).any():
        raise ConfigError("synthetic mid path went non-positive; lower drift/noise or raise base_price")
    levels = np.arange(depth)
    gaps = tick * (1.0 + 0.5 * rng.random((n, 2, depth)))
    gaps[:, :, 0] = 0.0
    offsets = half_spread + np.cumsum(gaps, axis=2)
    if kind == "flat":
        offsets[:] = offsets[0]
    base_qty = 1.0 + rng.random((n, 2, depth))
    if kind == "flat":
        base_qty[:] = base_qty[0]
    front = np.exp(-levels / max(depth / 4, 1.0))
    back = front[::-1]
    snaps = []
    for t in range(n):
        ask_q, bid_q = base_qty[t, 0].copy(), base_qty[t, 1].copy()
        if regime[t] != 0 and kind == "signal":
            ask_q *= 1.0 + 4.0 * (back if regime[t] > 0 else front)
            bid_q *= 1.0 + 4.0 * (front if regime[t] > 0 else back)
        asks = np.column_stack([mid[t] + offsets[t, 0], ask_q])
        bids = np.column_stack([mid[t] - offsets[t, 1], bid_q])
        snaps.append(LobSnapshot(start_ms + t * interval_ms, symbol, asks, bids))
    return SnapshotSeries(symbol, snaps, interval_ms)


def generate_trades(series: SnapshotSeries, seed: int = 0, per_step: int = 3,
                    reach: float = 0.15, qty: float = 0.01) -> list[TradeEvent]:
    """Prints between consecutive snapshots at prices within ``reach`` of the later mid."""
    rng = np.random.default_rng(seed)
    ts, mids = series.ts, series.mids
    out = []
    for i in range(1, len(series)):
        gap = int(ts[i] - ts[i - 1])
        offsets = np.sort(rng.choice(np.arange(1, gap + 1), size=min(per_step, gap), replace=False))
        for off in offsets:
            price = mids[i] + reach * (2.0 * rng.random() - 1.0)
            side = "buy" if rng.random() < 0.5 else "sell"
            out.append(TradeEvent(int(ts[i - 1] + off), series.symbol, float(price), qty, side))
    return out
