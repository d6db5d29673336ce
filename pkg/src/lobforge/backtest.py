"""Event-driven replay of a two-sided quoting strategy.

At every step the predictor sees the tape up to the current snapshot, the
strategy quotes a sell and a buy around the predicted mid, and the quotes are
matched against the next snapshot (crossing -> taker) and the trade prints in
between (resting -> maker). Unfilled quotes are cancelled at the step boundary.

Per-step pnl is the change in equity ``cash + inventory * mid``::

    pnl_i = sum_fills side * (mid_next - price) * qty - fee
            + inventory_before * (mid_next - mid_prev)
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .book import SnapshotSeries, TradeEvent
from .embedding import embed_arrays, merge_stacked
from .errors import ConfigError, SeriesTooShort
from .metrics import fit_log_growth, strategy_report
from .sampling import bucket_index, decode_prediction

BUY, SELL = 1, -1
CAP_ATOL = 1e-9


@dataclass(frozen=True)
class StrategyConfig:
    quote_spread: float = 0.1
    max_side_notional: float = 5.0
    maker_fee_rate: float = -0.0001
    taker_fee_rate: float = 0.0005
    use_trade_tape: bool = True
    initial_capital: float = 100.0
    taker_at_touch: bool = False
    paper_literal_fill_rule: bool = False

    def __post_init__(self):
        if not self.quote_spread > 0:
            raise ConfigError("quote_spread must be > 0")
        if not self.max_side_notional > 0:
            raise ConfigError("max_side_notional must be > 0")

    def to_meta(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Order:
    side: int
    price: float
    qty: float


@dataclass(frozen=True)
class Fill:
    side: int
    price: float
    qty: float
    role: str  # "maker" | "taker"
    fee: float


@dataclass
class BookkeepingState:
    cash: float
    inventory: float
    last_mid: float

    def equity(self, mid: float | None = None) -> float:
        return self.cash + self.inventory * (self.last_mid if mid is None else mid)


def quote(pred_mid: float, cfg: StrategyConfig, state: BookkeepingState) -> list[Order]:
    """Sell above and buy below the predicted mid; sides that would breach the cap are dropped."""
    if not (np.isfinite(pred_mid) and pred_mid > 0):
        return []
    half = cfg.quote_spread / 2
    orders = []
    for side, price in ((SELL, pred_mid + half), (BUY, pred_mid - half)):
        if price <= 0:
            continue
        qty = cfg.max_side_notional / price
        if abs(state.inventory + side * qty) * price > cfg.max_side_notional + CAP_ATOL:
            continue
        orders.append(Order(side, price, qty))
    return orders


def _crosses(order: Order, best_bid: float, best_ask: float, literal: bool) -> bool:
    if literal:
        # the rule exactly as worded: sell above the bid / buy below the ask go to market
        return order.price > best_bid if order.side == SELL else order.price < best_ask
    return order.price <= best_bid if order.side == SELL else order.price >= best_ask


def match_orders(orders: Sequence[Order], best_bid: float, best_ask: float, trade_prices,
                 cfg: StrategyConfig) -> list[Fill]:
    """Fills for ``orders`` against the next touch and the prints in between."""
    prices = np.asarray(trade_prices, dtype=np.float64)
    fills = []
    for o in orders:
        if _crosses(o, best_bid, best_ask, cfg.paper_literal_fill_rule):
            px = o.price
            if cfg.taker_at_touch:
                px = best_bid if o.side == SELL else best_ask
            fills.append(Fill(o.side, px, o.qty, "taker", cfg.taker_fee_rate * px * o.qty))
            continue
        if not cfg.use_trade_tape or prices.size == 0:
            continue
        hit = (prices >= o.price).any() if o.side == SELL else (prices <= o.price).any()
        if hit:
            fills.append(Fill(o.side, o.price, o.qty, "maker", cfg.maker_fee_rate * o.price * o.qty))
    return fills


def step_pnl(state: BookkeepingState, fills: Sequence[Fill], mid_next: float) -> float:
    """Book ``fills``, mark to ``mid_next`` and return the step's pnl."""
    pnl = state.inventory * (mid_next - state.last_mid)
    for f in fills:
        pnl += f.side * (mid_next - f.price) * f.qty - f.fee
        state.cash += -f.side * f.price * f.qty - f.fee
        state.inventory += f.side * f.qty
    state.last_mid = mid_next
    return pnl


# -- predictors --------------------------------------------------------------------

class TapeView:
    """Read-only prefix ``[0, stop)`` of a tape handed to predictors."""

    def __init__(self, series: SnapshotSeries, stop: int):
        self._series = series
        self.stop = stop
        self.symbol = series.symbol

    def __len__(self):
        return self.stop

    @property
    def ts(self) -> np.ndarray:
        return self._series.ts[:self.stop]

    @property
    def asks(self) -> np.ndarray:
        return self._series.asks[:self.stop]

    @property
    def bids(self) -> np.ndarray:
        return self._series.bids[:self.stop]

    @property
    def mids(self) -> np.ndarray:
        return self._series.mids[:self.stop]


class Predictor(Protocol):
    warmup: int

    def __call__(self, view: TapeView) -> float: ...


class PersistencePredictor:
    warmup = 1

    def __call__(self, view: TapeView) -> float:
        return float(view.mids[-1])


class ModelPredictor:
    """Forecast the mid with a trained model from the visible prefix of the tape."""

    def __init__(self, model, asset: int = 0):
        if model.sample_spec is None:
            raise ConfigError("model has no sample spec; train it or load a checkpoint first")
        self.model = model
        self.spec = model.sample_spec
        self.asset = asset
        self.warmup = self.spec.frame_count if self.spec.aggregation == "window" else 1

    def window_indices(self, view: TapeView) -> np.ndarray:
        n, L = len(view), self.spec.frame_count
        if self.spec.aggregation == "window":
            return np.arange(n - L, n)
        k = bucket_index(view.ts, self.spec.interval_ms)
        start = int(np.searchsorted(k, k[-1], side="left"))
        idx = np.arange(max(start, n - L), n)
        return np.r_[np.full(L - len(idx), start), idx].astype(np.int64)

    def __call__(self, view: TapeView) -> float:
        from .models import predict_raw_inputs

        idx = self.window_indices(view)
        stats = self.spec.embed.stats_for(view.symbol)
        frames = embed_arrays(view.asks[idx], view.bids[idx], self.spec.embed, stats).astype(np.float32)
        x = frames[None]
        if self.model.arch.representation == "merged":
            x = merge_stacked(x)
        raw = predict_raw_inputs(self.model, x)[0, self.asset]
        anchor = view.mids[idx[-1] if self.spec.anchor == "last" else idx[0]]
        return float(decode_prediction(raw, anchor, self.spec.target_kind))


# -- engine ------------------------------------------------------------------------

@dataclass
class PnlSeries:
    ts: np.ndarray  # timestamp of the snapshot each step settles on
    pnl: np.ndarray
    equity: np.ndarray  # after each step
    inventory: np.ndarray
    fills: list  # list[list[Fill]] per step
    initial_equity: float
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pnl)

    @property
    def cum_pnl(self) -> np.ndarray:
        return np.cumsum(self.pnl)

    def summary(self) -> dict:
        rep = strategy_report(self.pnl).to_dict()
        out = {k: rep[k] for k in ("sharpe", "total_pnl", "max_drawdown", "n_samples")}
        curve = np.r_[self.initial_equity, self.equity]
        fit = fit_log_growth(curve)
        out["log_growth"] = {"bias": fit.bias, "velocity": fit.velocity, "velocity_bps": fit.velocity_bps}
        roles = [f.role for step in self.fills for f in step]
        out["fills"] = {"maker": roles.count("maker"), "taker": roles.count("taker")}
        out["final_equity"] = float(self.equity[-1]) if len(self.equity) else self.initial_equity
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ts_ms", "pnl", "cum_pnl", "equity", "inventory",
                    "fill_side", "fill_price", "fill_qty", "fill_role", "fee"])
        cum = self.cum_pnl
        for i in range(len(self.pnl)):
            fs = self.fills[i]
            w.writerow([
                int(self.ts[i]), repr(float(self.pnl[i])), repr(float(cum[i])),
                repr(float(self.equity[i])), repr(float(self.inventory[i])),
                ";".join("buy" if f.side == BUY else "sell" for f in fs),
                ";".join(repr(f.price) for f in fs),
                ";".join(repr(f.qty) for f in fs),
                ";".join(f.role for f in fs),
                ";".join(repr(f.fee) for f in fs),
            ])
        return buf.getvalue()

    def to_json(self, extra: dict | None = None) -> str:
        doc = {"metrics": self.summary(), "strategy": self.config, "steps": len(self)}
        if extra:
            doc.update(extra)
        return json.dumps(doc, sort_keys=True, indent=2)


def run_backtest(series: SnapshotSeries, trades: Sequence[TradeEvent], predictor,
                 cfg: StrategyConfig = StrategyConfig(), start: int | None = None,
                 check_invariants: bool = True) -> PnlSeries:
    """Replay ``series`` from ``start`` (default: the predictor's warm-up) to the end."""
    i0 = max(int(getattr(predictor, "warmup", 1)) - 1, 0) if start is None else start
    T = len(series)
    if T - i0 < 2:
        raise SeriesTooShort(f"{T} snapshots leave no step to trade after warm-up {i0}")
    ts, mids = series.ts, series.mids
    best_ask, best_bid = series.asks[:, 0, 0], series.bids[:, 0, 0]
    trade_list = sorted(trades, key=lambda t: t.ts_ms)
    trade_ts = np.array([t.ts_ms for t in trade_list], dtype=np.int64)
    trade_px = np.array([t.price for t in trade_list], dtype=np.float64)

    state = BookkeepingState(cfg.initial_capital, 0.0, float(mids[i0]))
    n = T - 1 - i0
    pnl = np.empty(n)
    equity = np.empty(n)
    inventory = np.empty(n)
    fills_log = []
    for k, i in enumerate(range(i0, T - 1)):
        pred = predictor(TapeView(series, i + 1))
        orders = quote(pred, cfg, state)
        lo, hi = np.searchsorted(trade_ts, [ts[i], ts[i + 1]], side="right")
        fills = match_orders(orders, float(best_bid[i + 1]), float(best_ask[i + 1]), trade_px[lo:hi], cfg)
        mid_next = float(mids[i + 1])
        pnl[k] = step_pnl(state, fills, mid_next)
        equity[k] = state.equity()
        inventory[k] = state.inventory
        fills_log.append(fills)
        if check_invariants:
            in_flight = sum(o.price * o.qty for o in orders)
            assert abs(state.inventory * mid_next) <= cfg.max_side_notional + in_flight + CAP_ATOL, \
                f"position cap breached at step {k}"
    out = PnlSeries(ts[i0 + 1:].copy(), pnl, equity, inventory, fills_log, cfg.initial_capital,
                    cfg.to_meta())
    if check_invariants:
        drift = abs((equity[-1] - cfg.initial_capital) - pnl.sum())
        assert drift <= 1e-9, f"accounting identity off by {drift}"
    return out
