import numpy as np
import pytest

from lobforge.book import LobSnapshot
from lobforge.nn import _backend, _pykernels

try:
    from lobforge.nn import _ckernels
except ImportError:  # compiled kernels not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    monkeypatch.setattr(_backend, "kernels", BACKENDS[request.param])
    return request.param


def make_snapshot(ts=0, symbol="TEST", mid=100.0, depth=5, tick=0.01, half_spread=0.05, qty=None):
    asks = np.column_stack([mid + half_spread + tick * np.arange(depth),
                            np.ones(depth) if qty is None else qty[0]])
    bids = np.column_stack([mid - half_spread - tick * np.arange(depth),
                            np.ones(depth) if qty is None else qty[1]])
    return LobSnapshot(ts, symbol, asks, bids)


def random_snapshot(rng, depth=50, ts=0, symbol="TEST"):
    mid = rng.uniform(10, 1000)
    half = rng.uniform(0.005, 0.5)
    ask_px = mid + half + np.r_[0.0, np.cumsum(rng.uniform(0.001, 0.1, depth - 1))]
    bid_px = mid - half - np.r_[0.0, np.cumsum(rng.uniform(0.001, 0.1, depth - 1))]
    asks = np.column_stack([ask_px, rng.uniform(0.0, 50.0, depth)])
    bids = np.column_stack([bid_px, rng.uniform(0.0, 50.0, depth)])
    return LobSnapshot(ts, symbol, asks, bids)
