"""Pure numpy kernels; the reference the compiled kernels must match bit for bit.

Accumulating kernels (``col2im``, overlapping ``maxpool_backward``) add
contributions to each output element in a fixed order so the compiled
implementation can reproduce the exact same floating-point sums.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"

_MASK = (1 << 64) - 1


def im2col(x, kh, kw, sh, sw):
    """(N, C, H, W) -> (N, OH, OW, C*kh*kw), columns ordered (c, ki, kj)."""
    n, c = x.shape[:2]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    oh, ow = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh, ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, sh, sw):
    n, c, h, w = x_shape
    _, oh, ow, _ = cols.shape
    c6 = cols.reshape(n, oh, ow, c, kh, kw)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dx[:, :, ki:ki + sh * (oh - 1) + 1:sh, kj:kj + sw * (ow - 1) + 1:sw] += \
                c6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dx


def maxpool_forward(x, kh, kw, sh, sw):
    """Window maxima and the flat (h*W + w) index of the first maximiser."""
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    oh, ow = win.shape[2:4]
    flat = win.reshape(n, c, oh, ow, kh * kw)
    a = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, a[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * sh + a // kw
    cols = np.arange(ow)[None, :] * sw + a % kw
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool_backward(dout, arg, x_shape, kh, kw, sh, sw):
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h * w), dtype=dout.dtype)
    idx = arg.reshape(n, c, -1)
    g = dout.reshape(n, c, -1)
    if sh >= kh and sw >= kw:
        # windows are disjoint: each input receives at most one gradient
        np.put_along_axis(dx, idx, g, axis=-1)
    else:
        ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        np.add.at(dx, (np.broadcast_to(ni[..., None], idx.shape),
                       np.broadcast_to(ci[..., None], idx.shape), idx), g)
    return dx.reshape(x_shape)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def xoshiro_uniform(state, n):
    """Draw ``n`` doubles in [0, 1) from a xoshiro256** state (4 uint64, updated in place)."""
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        out[i] = (result >> 11) * (1.0 / 9007199254740992.0)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return out
