"""Central finite-difference gradient checks on a float64 shadow copy."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import MaxPool2d, Module, ReLU
from .rng import Rng


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_tensor: dict = field(default_factory=dict)
    resamples: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def __str__(self):
        worst = max(self.per_tensor, key=self.per_tensor.get) if self.per_tensor else "-"
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g}, worst {worst})"


def rel_error(analytic, numeric, floor_frac=1e-3) -> float:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised.

    The floor is ``floor_frac`` times the largest gradient magnitude in the
    tensor, so entries that are zero up to round-off do not dominate.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor_frac * scale)
    return float((np.abs(a - n) / denom).max())


def shadow_f64(module: Module) -> Module:
    m = copy.deepcopy(module)
    for p in m.all_params():
        p.value = p.value.astype(np.float64)
        p.grad = None
    return m


def _kink_margin(module: Module) -> float:
    margins = [m.kink_margin for m in module.walk() if isinstance(m, (MaxPool2d, ReLU))]
    return min(margins, default=np.inf)


def _set_tracking(module: Module, on: bool) -> None:
    for m in module.walk():
        if isinstance(m, (MaxPool2d, ReLU)):
            m.track_kinks = on


def grad_check(module: Module, x, eps: float = 1e-6, tolerance: float = 1e-4, seed: int = 0,
               max_coords: int | None = 64, check_input: bool = True,
               resample: Callable[[Rng], np.ndarray] | None = None, max_resamples: int = 10,
               input_eps: float | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``sum(R * module(x))`` with central differences.

    ``R`` is a fixed random projection so every output contributes. At most
    ``max_coords`` randomly chosen coordinates per tensor are perturbed
    (None = all). When ``resample`` is given and an input lies within a few
    ``eps`` of a ReLU or max-pool kink, a fresh input is drawn. ``input_eps``
    (default ``eps``) is the step for input coordinates; networks that rescale
    their input should get ``eps`` divided by that scale.
    """
    rng = Rng(seed, "gradcheck")
    m = shadow_f64(module)
    _set_tracking(m, True)
    x = np.asarray(x, dtype=np.float64)
    resamples = 0
    out = m.forward(x)
    while _kink_margin(m) < 20 * eps and resample is not None and resamples < max_resamples:
        x = np.asarray(resample(rng), dtype=np.float64)
        out = m.forward(x)
        resamples += 1
    _set_tracking(m, False)
    R = rng.uniform(out.shape, -1.0, 1.0)

    def loss(inp):
        return float(np.sum(R * m.forward(inp)))

    m.forward(x)
    dx = m.backward(R)
    params = m.all_params()
    analytic = [np.array(p.grad, dtype=np.float64) for p in params]
    per_tensor = {}

    def pick(size):
        if max_coords is None or size <= max_coords:
            return np.arange(size)
        return rng.permutation(size)[:max_coords]

    for k_param, p in enumerate(params):
        flat = p.value.reshape(-1)
        idx = pick(flat.size)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = loss(x)
            flat[i] = old - eps
            down = loss(x)
            flat[i] = old
            num[k] = (up - down) / (2 * eps)
        key = p.name if p.name not in per_tensor else f"{p.name}#{k_param}"
        per_tensor[key] = rel_error(analytic[k_param].reshape(-1)[idx], num)

    if check_input:
        h = eps if input_eps is None else input_eps
        xf = x.copy().reshape(-1)
        idx = pick(xf.size)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = xf[i]
            xf[i] = old + h
            up = loss(xf.reshape(x.shape))
            xf[i] = old - h
            down = loss(xf.reshape(x.shape))
            xf[i] = old
            num[k] = (up - down) / (2 * h)
        per_tensor["input"] = rel_error(np.asarray(dx).reshape(-1)[idx], num)

    worst = max(per_tensor.values(), default=0.0)
    return GradCheckReport(worst, tolerance, per_tensor, resamples)
