from __future__ import annotations

from typing import Iterable

import numpy as np

from .layers import Param


def adam_update(params: Iterable[Param], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One bias-corrected Adam step; moments are float64, values keep their dtype."""
    for p in params:
        if p.grad is None:
            continue
        g = np.asarray(p.grad, dtype=np.float64)
        if p.m is None:
            p.m = np.zeros(p.shape)
            p.v = np.zeros(p.shape)
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.value = (p.f64() - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_update(self.params, self.lr, self.beta1, self.beta2, self.eps)
