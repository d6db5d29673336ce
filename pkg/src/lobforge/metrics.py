"""Forecast and strategy metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .book import TradeEvent
from .errors import (DegenerateFit, InsufficientOverlap, LengthMismatch, NonPositiveActual,
                     SeriesTooShort, ZeroVariance)

BPS_PER_PERCENT = 100.0


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).ravel()


def mape(actuals, forecasts) -> float:
    """Mean absolute percentage error, in percent."""
    p, q = _vec(actuals), _vec(forecasts)
    if p.shape != q.shape:
        raise LengthMismatch(f"{p.size} actuals vs {q.size} forecasts")
    if p.size == 0:
        raise LengthMismatch("mape of an empty vector")
    if not (p > 0).all():
        raise NonPositiveActual("mape needs strictly positive actual values")
    return float(np.mean(np.abs(p - q) / p) * 100.0)


def mape_bps(actuals, forecasts) -> float:
    return mape(actuals, forecasts) * BPS_PER_PERCENT


def sharpe(pnl) -> float:
    """``sqrt(N) * mean / std`` with the population standard deviation."""
    x = _vec(pnl)
    if x.size < 2:
        raise SeriesTooShort("sharpe needs at least two pnl values")
    sd = x.std()
    if not sd > 0:
        raise ZeroVariance("pnl has zero variance; sharpe is undefined")
    return float(np.sqrt(x.size) * x.mean() / sd)


def total_pnl(pnl) -> float:
    return float(_vec(pnl).sum())


def max_drawdown(pnl) -> float:
    """Most negative gap between cumulative pnl and its running maximum."""
    c = np.cumsum(_vec(pnl))
    if c.size == 0:
        return 0.0
    return float(min((c - np.maximum.accumulate(c)).min(), 0.0))


@dataclass(frozen=True)
class LogGrowthFit:
    bias: float
    velocity: float

    @property
    def velocity_bps(self) -> float:
        return self.velocity * 1e4

    def __call__(self, step):
        return self.bias + self.velocity * np.log(step)


def fit_log_growth(equity, timestamps=None) -> LogGrowthFit:
    """Least squares ``equity = bias + velocity * ln(k)`` with k the 1-based step index."""
    y = _vec(equity)
    if timestamps is not None and len(timestamps) != y.size:
        raise LengthMismatch(f"{y.size} equity points vs {len(timestamps)} timestamps")
    if y.size < 2:
        raise DegenerateFit("log-growth fit needs at least two points")
    if not np.isfinite(y).all():
        raise DegenerateFit("equity curve contains non-finite values")
    x = np.log(np.arange(1, y.size + 1, dtype=np.float64))
    # centring on the first point keeps a constant curve at exactly zero slope
    yc = y - y[0]
    xm = x - x.mean()
    velocity = float(xm @ (yc - yc.mean()) / (xm @ xm))
    bias = float(y[0] + yc.mean() - velocity * x.mean())
    return LogGrowthFit(bias, velocity)


# -- volume correlation ------------------------------------------------------------

def bucket_volumes(trades: list[TradeEvent], interval_ms: int, start_ms: int, end_ms: int) -> np.ndarray:
    """Traded quantity per bucket ``(start + k*T, start + (k+1)*T]``."""
    n = int(np.ceil((end_ms - start_ms) / interval_ms))
    out = np.zeros(max(n, 0))
    for t in trades:
        k = -((start_ms - t.ts_ms) // interval_ms) - 1
        if 0 <= k < n:
            out[k] += t.qty
    return out


def relative_changes(volumes) -> np.ndarray:
    """``v_t / v_{t-1} - 1``; undefined where the previous bucket is empty (NaN)."""
    v = np.asarray(volumes, dtype=np.float64)
    prev, cur = v[:-1], v[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(prev > 0, cur / prev - 1.0, np.nan)


def correlation_of_changes(changes, min_overlap: int = 3) -> np.ndarray:
    """Pearson correlation matrix of per-symbol change series (rows = symbols).

    Only time steps where every series is defined are used.
    """
    x = np.asarray(changes, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientOverlap("need at least two series")
    x = x[:, np.isfinite(x).all(axis=0)]
    if x.shape[1] < min_overlap:
        raise InsufficientOverlap(f"only {x.shape[1]} jointly defined buckets (need {min_overlap})")
    xc = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((xc * xc).sum(axis=1))
    if not (norms > 0).all():
        raise ZeroVariance("a change series is constant; correlation undefined")
    k = x.shape[0]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            r = float(np.clip(xc[i] @ xc[j] / (norms[i] * norms[j]), -1.0, 1.0))
            out[i, j] = out[j, i] = r
    return out


def volume_correlation(volumes: dict, min_overlap: int = 3) -> tuple[list, np.ndarray]:
    """``{symbol: per-bucket volumes}`` -> (symbols, correlation of relative changes)."""
    symbols = list(volumes)
    if len(symbols) < 2:
        raise InsufficientOverlap("need at least two symbols")
    lengths = {len(volumes[s]) for s in symbols}
    if len(lengths) != 1:
        raise InsufficientOverlap(f"volume series are not aligned: lengths {sorted(lengths)}")
    changes = np.stack([relative_changes(volumes[s]) for s in symbols])
    return symbols, correlation_of_changes(changes, min_overlap)


# -- report ------------------------------------------------------------------------

@dataclass
class MetricReport:
    mape_pct: float | None = None
    mape_bps: float | None = None
    sharpe: float | None = None
    total_pnl: float | None = None
    max_drawdown: float | None = None
    n_samples: int = 0
    per_symbol: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def forecast_report(actuals, forecasts, symbols=None) -> MetricReport:
    p, q = _vec(actuals), _vec(forecasts)
    m = mape(p, q)
    rep = MetricReport(mape_pct=m, mape_bps=m * BPS_PER_PERCENT, n_samples=int(p.size))
    if symbols is not None:
        sym = np.asarray(symbols).ravel()
        for s in sorted(set(sym.tolist())):
            k = sym == s
            ms = mape(p[k], q[k])
            rep.per_symbol[str(s)] = {"mape_pct": ms, "mape_bps": ms * BPS_PER_PERCENT,
                                      "n_samples": int(k.sum())}
    return rep


def strategy_report(pnl) -> MetricReport:
    x = _vec(pnl)
    try:
        sr = sharpe(x)
    except (ZeroVariance, SeriesTooShort):
        sr = None
    return MetricReport(sharpe=sr, total_pnl=total_pnl(x), max_drawdown=max_drawdown(x),
                        n_samples=int(x.size))
