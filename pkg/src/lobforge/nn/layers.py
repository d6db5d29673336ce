"""Layers with hand-written backward passes.

Parameters are stored as float32 (or float64 for gradient-check shadows);
every forward/backward computes in float64. Images are NCHW.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import _backend
from .rng import Rng, seeded_init

F64 = np.float64


@dataclass(eq=False)
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray | None = None
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    @property
    def shape(self):
        return self.value.shape

    def f64(self) -> np.ndarray:
        return self.value.astype(F64, copy=False)


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.ndim(v) == 0 else (int(v[0]), int(v[1]))


# -- functional kernels --------------------------------------------------------

def conv_output_size(h, w, kh, kw, stride=1, padding=0):
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    if (h + 2 * ph - kh) % sh or (w + 2 * pw - kw) % sw:
        raise ShapeMismatch(f"conv {kh}x{kw}/s{(sh, sw)}/p{(ph, pw)} does not tile a {h}x{w} input")
    oh, ow = (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"conv {kh}x{kw} larger than padded {h}x{w} input")
    return oh, ow


def conv2d_forward(x, w, b, stride=1, padding=0):
    """Cross-correlation. x: (N, Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout,)."""
    x = np.asarray(x, dtype=F64)
    w = np.asarray(w, dtype=F64)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs weight {w.shape}")
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    cout, _, kh, kw = w.shape
    n = x.shape[0]
    oh, ow = conv_output_size(x.shape[2], x.shape[3], kh, kw, (sh, sw), (ph, pw))
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else np.ascontiguousarray(x)
    cols = _backend.kernels.im2col(xp, kh, kw, sh, sw).reshape(n * oh * ow, -1)
    out = cols @ w.reshape(cout, -1).T
    out += np.asarray(b, dtype=F64)
    out = out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, xp.shape, w, (sh, sw), (ph, pw))


def conv2d_backward(dout, cache):
    cols, xp_shape, w, (sh, sw), (ph, pw) = cache
    cout, _, kh, kw = w.shape
    n, _, oh, ow = dout.shape
    d = np.ascontiguousarray(np.asarray(dout, dtype=F64).transpose(0, 2, 3, 1)).reshape(-1, cout)
    dw = (d.T @ cols).reshape(w.shape)
    db = d.sum(axis=0)
    dcols = (d @ w.reshape(cout, -1)).reshape(n, oh, ow, -1)
    dxp = _backend.kernels.col2im(dcols, tuple(xp_shape), kh, kw, sh, sw)
    dx = dxp[:, :, ph:xp_shape[2] - ph, pw:xp_shape[3] - pw]
    return np.ascontiguousarray(dx), dw, db


def maxpool2d_forward(x, kernel, stride=None):
    x = np.ascontiguousarray(x, dtype=F64)
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    if x.ndim != 4 or x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeMismatch(f"maxpool {kh}x{kw} does not fit input {x.shape}")
    out, arg = _backend.kernels.maxpool_forward(x, kh, kw, sh, sw)
    return out, (arg, x.shape, (kh, kw, sh, sw))


def maxpool2d_backward(dout, cache):
    arg, x_shape, (kh, kw, sh, sw) = cache
    return _backend.kernels.maxpool_backward(np.ascontiguousarray(dout, dtype=F64), arg,
                                             tuple(x_shape), kh, kw, sh, sw)


def dense_forward(x, w, b):
    x = np.asarray(x, dtype=F64)
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"dense: input {x.shape} vs weight {w.shape}")
    return x @ np.asarray(w, dtype=F64).T + np.asarray(b, dtype=F64), (x, np.asarray(w, dtype=F64))


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=F64)))


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def tanh(x):
    return np.tanh(np.asarray(x, dtype=F64))


def tanh_backward(dout, y):
    return dout * (1.0 - y * y)


def lstm_step_forward(x, h, c, W, U, b):
    """One LSTM cell step; gate blocks in ``W``/``U``/``b`` are ordered i, f, g, o.

    x: (N, E), h/c: (N, H), W: (4H, E), U: (4H, H), b: (4H,).
    """
    W, U = np.asarray(W, dtype=F64), np.asarray(U, dtype=F64)
    hd = U.shape[1]
    if W.shape[0] != 4 * hd or U.shape[0] != 4 * hd or x.shape[-1] != W.shape[1] or h.shape[-1] != hd:
        raise ShapeMismatch(f"lstm: x {x.shape}, h {h.shape}, W {W.shape}, U {U.shape}")
    z = x @ W.T + h @ U.T + np.asarray(b, dtype=F64)
    i = sigmoid(z[:, :hd])
    f = sigmoid(z[:, hd:2 * hd])
    g = np.tanh(z[:, 2 * hd:3 * hd])
    o = sigmoid(z[:, 3 * hd:])
    c_next = f * c + i * g
    tc = np.tanh(c_next)
    h_next = o * tc
    return h_next, c_next, (x, h, c, i, f, g, o, tc, W, U)


def lstm_step_backward(dh_next, dc_next, cache):
    x, h, c, i, f, g, o, tc, W, U = cache
    dc = dc_next + dh_next * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        dh_next * tc * o * (1.0 - o),
    ], axis=1)
    return dz @ W, dz @ U, dc * f, dz.T @ x, dz.T @ h, dz.sum(axis=0)


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=F64)
    target = np.asarray(target, dtype=F64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- modules -------------------------------------------------------------------

class Module:
    track_kinks = False

    def params(self) -> list[Param]:
        return []

    def children(self) -> list["Module"]:
        return []

    def walk(self):
        yield self
        for ch in self.children():
            yield from ch.walk()

    def all_params(self) -> list[Param]:
        out = []
        for m in self.walk():
            out.extend(m.params())
        return out

    def __call__(self, x):
        return self.forward(x)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, padding=0, rng: Rng | None = None, name="conv"):
        kh, kw = _pair(kernel)
        rng = rng or Rng(0, name)
        fan_in = cin * kh * kw
        self.weight = Param(f"{name}.weight", seeded_init((cout, cin, kh, kw), fan_in, rng))
        self.bias = Param(f"{name}.bias", seeded_init((cout,), fan_in, rng))
        self.stride, self.padding = _pair(stride), _pair(padding)

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        out, self._cache = conv2d_forward(x, self.weight.f64(), self.bias.f64(), self.stride, self.padding)
        return out

    def backward(self, dout):
        dx, dw, db = conv2d_backward(dout, self._cache)
        self.weight.grad, self.bias.grad = dw, db
        return dx


class MaxPool2d(Module):
    def __init__(self, kernel=2, stride=None):
        self.kernel = _pair(kernel)
        self.stride = _pair(stride if stride is not None else kernel)
        self.kink_margin = np.inf

    def forward(self, x):
        out, self._cache = maxpool2d_forward(x, self.kernel, self.stride)
        if self.track_kinks:
            self.kink_margin = _pool_margin(np.asarray(x, dtype=F64), self.kernel, self.stride)
        return out

    def backward(self, dout):
        return maxpool2d_backward(dout, self._cache)


def _pool_margin(x, kernel, stride):
    """Smallest gap between the top two entries of any pooling window.

    Ties between exact zeros (dead ReLU units) stay tied under small
    perturbations and are not counted.
    """
    from numpy.lib.stride_tricks import sliding_window_view
    kh, kw = kernel
    if kh * kw < 2:
        return np.inf
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride[0], ::stride[1]]
    flat = np.sort(win.reshape(*win.shape[:4], -1), axis=-1)
    top, second = flat[..., -1], flat[..., -2]
    gap = np.where((top == 0.0) & (second == 0.0), np.inf, top - second)
    return float(gap.min(initial=np.inf))


class Dense(Module):
    def __init__(self, fin, fout, rng: Rng | None = None, name="dense"):
        rng = rng or Rng(0, name)
        self.weight = Param(f"{name}.weight", seeded_init((fout, fin), fin, rng))
        self.bias = Param(f"{name}.bias", seeded_init((fout,), fin, rng))

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        out, self._cache = dense_forward(x, self.weight.f64(), self.bias.f64())
        return out

    def backward(self, dout):
        dx, dw, db = dense_backward(dout, self._cache)
        self.weight.grad, self.bias.grad = dw, db
        return dx


class ReLU(Module):
    kink_margin = np.inf

    def forward(self, x):
        self._x = np.asarray(x, dtype=F64)
        if self.track_kinks:
            self.kink_margin = float(np.abs(self._x).min())
        return relu(self._x)

    def backward(self, dout):
        return relu_backward(dout, self._x)


class Sigmoid(Module):
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dout):
        return sigmoid_backward(dout, self._y)


class Tanh(Module):
    def forward(self, x):
        self._y = tanh(x)
        return self._y

    def backward(self, dout):
        return tanh_backward(dout, self._y)


class Flatten(Module):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Reshape(Module):
    def __init__(self, *shape):
        self.shape = shape

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, dout):
        return dout.reshape(self._shape)


class LSTM(Module):
    """Single-layer LSTM over ``(N, T, E)``; returns the last hidden state."""

    def __init__(self, input_size, hidden_size, rng: Rng | None = None, name="lstm"):
        rng = rng or Rng(0, name)
        h = hidden_size
        self.hidden_size = h
        self.W = Param(f"{name}.W", seeded_init((4 * h, input_size), h, rng))
        self.U = Param(f"{name}.U", seeded_init((4 * h, h), h, rng))
        self.b = Param(f"{name}.b", seeded_init((4 * h,), h, rng))

    def params(self):
        return [self.W, self.U, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=F64)
        if x.ndim != 3:
            raise ShapeMismatch(f"lstm expects (N, T, E), got {x.shape}")
        n, steps, _ = x.shape
        W, U, b = self.W.f64(), self.U.f64(), self.b.f64()
        h = np.zeros((n, self.hidden_size))
        c = np.zeros((n, self.hidden_size))
        self._caches = []
        for t in range(steps):
            h, c, cache = lstm_step_forward(x[:, t], h, c, W, U, b)
            self._caches.append(cache)
        return h

    def backward(self, dout):
        dW = np.zeros(self.W.shape)
        dU = np.zeros(self.U.shape)
        db = np.zeros(self.b.shape)
        dh, dc = np.asarray(dout, dtype=F64), np.zeros_like(dout, dtype=F64)
        dxs = []
        for cache in reversed(self._caches):
            dx, dh, dc, dw_t, du_t, db_t = lstm_step_backward(dh, dc, cache)
            dW += dw_t
            dU += du_t
            db += db_t
            dxs.append(dx)
        self.W.grad, self.U.grad, self.b.grad = dW, dU, db
        return np.stack(dxs[::-1], axis=1)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
