"""Order-book snapshots, trade prints and tape I/O.

Tapes are JSON Lines, one record per line, optionally gzip-compressed::

    {"ts_ms": 1732665600000, "symbol": "BTCUSDT",
     "asks": [[price, qty], ...], "bids": [[price, qty], ...]}

    {"ts_ms": 1732665600123, "symbol": "BTCUSDT",
     "price": 95001.5, "qty": 0.01, "side": "buy"}
"""
from __future__ import annotations

import gzip
import io
import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import CrossedBook, EmptySeries, MalformedRecord, NegativeValue

log = logging.getLogger(__name__)

# absolute tolerance for monetary comparisons
PRICE_ATOL = 1e-9
# optional first line carrying provenance; skipped by the loaders
HEADER_KEY = "_provenance"
HEADER_PREFIX = '{"' + HEADER_KEY + '"'


def _number(value, what: str) -> float:
    # bool is an int subclass; reject it explicitly
    if isinstance(value, bool) or not isinstance(value, (int, float, str, Decimal)):
        raise MalformedRecord(f"{what}: expected number or decimal string, got {value!r}")
    if isinstance(value, str):
        try:
            value = Decimal(value)
        except InvalidOperation:
            raise MalformedRecord(f"{what}: not a decimal string: {value!r}") from None
    out = float(value)
    if not np.isfinite(out):
        raise MalformedRecord(f"{what}: non-finite value {value!r}")
    return out


def _ladder(raw, what: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise MalformedRecord(f"{what}: expected a non-empty array of [price, qty] pairs")
    out = np.empty((len(raw), 2), dtype=np.float64)
    for i, level in enumerate(raw):
        if not isinstance(level, (list, tuple)) or len(level) != 2:
            raise MalformedRecord(f"{what}[{i}]: expected [price, qty], got {level!r}")
        out[i, 0] = _number(level[0], f"{what}[{i}].price")
        out[i, 1] = _number(level[1], f"{what}[{i}].qty")
    return out


@dataclass(frozen=True, eq=False)
class LobSnapshot:
    """One depth-D book state.

    ``asks`` and ``bids`` are read-only ``(D, 2)`` arrays of ``(price, qty)``;
    asks ascend in price, bids descend.
    """

    ts_ms: int
    symbol: str
    asks: np.ndarray
    bids: np.ndarray

    def __post_init__(self):
        asks = np.array(self.asks, dtype=np.float64).reshape(-1, 2)
        bids = np.array(self.bids, dtype=np.float64).reshape(-1, 2)
        asks = asks[np.argsort(asks[:, 0], kind="stable")]
        bids = bids[np.argsort(-bids[:, 0], kind="stable")]
        _validate(asks, bids)
        asks.flags.writeable = False
        bids.flags.writeable = False
        object.__setattr__(self, "asks", asks)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "ts_ms", int(self.ts_ms))

    @property
    def depth(self) -> int:
        return self.asks.shape[0]

    @property
    def best_ask(self) -> float:
        return float(self.asks[0, 0])

    @property
    def best_bid(self) -> float:
        return float(self.bids[0, 0])

    def __eq__(self, other):
        if not isinstance(other, LobSnapshot):
            return NotImplemented
        return (
            self.ts_ms == other.ts_ms
            and self.symbol == other.symbol
            and np.array_equal(self.asks, other.asks)
            and np.array_equal(self.bids, other.bids)
        )

    __hash__ = None

    def to_record(self) -> dict:
        return {
            "ts_ms": self.ts_ms,
            "symbol": self.symbol,
            "asks": self.asks.tolist(),
            "bids": self.bids.tolist(),
        }


def _validate(asks: np.ndarray, bids: np.ndarray) -> None:
    if asks.shape[0] != bids.shape[0]:
        raise MalformedRecord(f"ask depth {asks.shape[0]} != bid depth {bids.shape[0]}")
    if asks.shape[0] < 1:
        raise MalformedRecord("empty ladder")
    if (asks[:, 0] <= 0).any() or (bids[:, 0] <= 0).any():
        raise NegativeValue("prices must be > 0")
    if (asks[:, 1] < 0).any() or (bids[:, 1] < 0).any():
        raise NegativeValue("quantities must be >= 0")
    if (np.diff(asks[:, 0]) <= 0).any() or (np.diff(bids[:, 0]) >= 0).any():
        raise MalformedRecord("duplicate price level in ladder")
    if asks[0, 0] - bids[0, 0] <= PRICE_ATOL:
        raise CrossedBook(f"best ask {asks[0, 0]} <= best bid {bids[0, 0]}")


@dataclass(frozen=True)
class TradeEvent:
    ts_ms: int
    symbol: str
    price: float
    qty: float
    side: str  # taker side

    def __post_init__(self):
        if self.side not in ("buy", "sell"):
            raise MalformedRecord(f"trade side must be 'buy' or 'sell', got {self.side!r}")
        if not self.price > 0 or not self.qty > 0:
            raise NegativeValue(f"trade price and qty must be > 0 ({self.price}, {self.qty})")

    def to_record(self) -> dict:
        return {"ts_ms": self.ts_ms, "symbol": self.symbol, "price": self.price,
                "qty": self.qty, "side": self.side}


@dataclass(eq=False)
class SnapshotSeries:
    """Time-ordered single-symbol tape with a fixed depth."""

    symbol: str
    snapshots: tuple
    nominal_interval_ms: int = field(default=0)

    def __post_init__(self):
        self.snapshots = tuple(self.snapshots)
        if not self.snapshots:
            raise EmptySeries(f"no snapshots for {self.symbol!r}")
        ts = np.array([s.ts_ms for s in self.snapshots], dtype=np.int64)
        if (np.diff(ts) <= 0).any():
            raise MalformedRecord("snapshot timestamps must be strictly increasing")
        depths = {s.depth for s in self.snapshots}
        if len(depths) != 1:
            raise MalformedRecord(f"varying depth within series: {sorted(depths)}")
        if any(s.symbol != self.symbol for s in self.snapshots):
            raise MalformedRecord("mixed symbols within series")
        if not self.nominal_interval_ms:
            self.nominal_interval_ms = int(np.median(np.diff(ts))) if len(ts) > 1 else 0

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]

    def __iter__(self) -> Iterator[LobSnapshot]:
        return iter(self.snapshots)

    @property
    def depth(self) -> int:
        return self.snapshots[0].depth

    @cached_property
    def ts(self) -> np.ndarray:
        return np.array([s.ts_ms for s in self.snapshots], dtype=np.int64)

    @cached_property
    def asks(self) -> np.ndarray:
        """``(T, D, 2)`` stacked ask ladders."""
        return np.stack([s.asks for s in self.snapshots])

    @cached_property
    def bids(self) -> np.ndarray:
        return np.stack([s.bids for s in self.snapshots])

    @cached_property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.asks[:, 0, 0] + self.bids[:, 0, 0])

    def between(self, t0: int | None = None, t1: int | None = None) -> "SnapshotSeries":
        keep = [s for s in self.snapshots
                if (t0 is None or s.ts_ms >= t0) and (t1 is None or s.ts_ms <= t1)]
        return SnapshotSeries(self.symbol, keep, self.nominal_interval_ms)


def mid_price(s: LobSnapshot) -> float:
    return 0.5 * (s.best_ask + s.best_bid)


def spread(s: LobSnapshot) -> float:
    return s.best_ask - s.best_bid


def parse_snapshot(line: str | bytes | dict) -> LobSnapshot:
    rec = _load_record(line)
    for key in ("ts_ms", "symbol", "asks", "bids"):
        if key not in rec:
            raise MalformedRecord(f"missing key {key!r}")
    ts = rec["ts_ms"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise MalformedRecord(f"ts_ms must be an integer, got {ts!r}")
    if not isinstance(rec["symbol"], str):
        raise MalformedRecord("symbol must be a string")
    return LobSnapshot(ts, rec["symbol"], _ladder(rec["asks"], "asks"), _ladder(rec["bids"], "bids"))


def serialize_snapshot(s: LobSnapshot) -> str:
    return json.dumps(s.to_record(), separators=(",", ":"))


def parse_trade(line: str | bytes | dict) -> TradeEvent:
    rec = _load_record(line)
    for key in ("ts_ms", "symbol", "price", "qty", "side"):
        if key not in rec:
            raise MalformedRecord(f"missing key {key!r}")
    ts = rec["ts_ms"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise MalformedRecord(f"ts_ms must be an integer, got {ts!r}")
    return TradeEvent(ts, rec["symbol"], _number(rec["price"], "price"),
                      _number(rec["qty"], "qty"), rec["side"])


def _load_record(line) -> dict:
    if isinstance(line, dict):
        return line
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedRecord(f"invalid JSON: {e}") from None
    if not isinstance(rec, dict):
        raise MalformedRecord("record is not a JSON object")
    return rec


def open_text(path) -> IO[str]:
    """Open a text file, transparently decompressing gzip."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _records(path) -> Iterator[tuple[int, str]]:
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith(HEADER_PREFIX):
                yield lineno, line


def _in_window(ts: int, window) -> bool:
    if window is None:
        return True
    t0, t1 = window
    return (t0 is None or ts >= t0) and (t1 is None or ts <= t1)


def load_tape(path, symbol: str | None = None, window=None) -> SnapshotSeries:
    """Load, filter, sort and de-duplicate a snapshot tape.

    ``window`` is an inclusive ``(t0, t1)`` pair; either end may be None.
    When ``symbol`` is None the tape must carry a single symbol.
    Duplicate timestamps keep the last record in file order.
    """
    by_ts: dict[int, LobSnapshot] = {}
    symbols = set()
    for lineno, line in _records(path):
        try:
            snap = parse_snapshot(line)
        except MalformedRecord as e:
            raise MalformedRecord(f"{path}:{lineno}: {e}") from None
        if symbol is not None and snap.symbol != symbol:
            continue
        if not _in_window(snap.ts_ms, window):
            continue
        symbols.add(snap.symbol)
        by_ts[snap.ts_ms] = snap
    if not by_ts:
        raise EmptySeries(f"{path}: no snapshots match symbol={symbol!r} window={window!r}")
    if len(symbols) > 1:
        raise MalformedRecord(f"{path}: several symbols {sorted(symbols)}; pass symbol=")
    snaps = [by_ts[t] for t in sorted(by_ts)]
    return SnapshotSeries(snaps[0].symbol, snaps)


def load_trades(path, symbol: str | None = None, window=None) -> list[TradeEvent]:
    out = []
    for lineno, line in _records(path):
        try:
            tr = parse_trade(line)
        except MalformedRecord as e:
            raise MalformedRecord(f"{path}:{lineno}: {e}") from None
        if symbol is not None and tr.symbol != symbol:
            continue
        if _in_window(tr.ts_ms, window):
            out.append(tr)
    if not out:
        raise EmptySeries(f"{path}: no trades match symbol={symbol!r} window={window!r}")
    out.sort(key=lambda t: t.ts_ms)  # stable: keeps file order within a millisecond
    return out


def _write_lines(path, lines: Iterable[str], header: dict | None) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps compressed output byte-stable
        raw = open(path, "wb")
        fh = io.TextIOWrapper(gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename=""), encoding="utf-8")
    else:
        raw, fh = None, open(path, "w", encoding="utf-8")
    with fh:
        if header is not None:
            fh.write(json.dumps({HEADER_KEY: header}, sort_keys=True, separators=(",", ":")) + "\n")
        for line in lines:
            fh.write(line)
            fh.write("\n")
    if raw is not None:
        raw.close()


def write_tape(path, snapshots: Iterable[LobSnapshot], header: dict | None = None) -> None:
    _write_lines(path, (serialize_snapshot(s) for s in snapshots), header)


def write_trades(path, trades: Iterable[TradeEvent], header: dict | None = None) -> None:
    _write_lines(path, (json.dumps(t.to_record(), separators=(",", ":")) for t in trades), header)


def read_header(path) -> dict | None:
    with open_text(path) as fh:
        first = fh.readline().strip()
    if first.startswith(HEADER_PREFIX):
        return json.loads(first)[HEADER_KEY]
    return None
