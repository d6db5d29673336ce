"""Deterministic random streams: splitmix64-seeded xoshiro256**.

Streams are named, so parameter init and batch shuffling draw from
independent sequences and adding a layer does not perturb the shuffle.
"""
from __future__ import annotations

import zlib

import numpy as np

from . import _backend

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> tuple[int, int]:
    """Return ``(next_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


class Rng:
    def __init__(self, seed: int, stream: str = ""):
        x = (int(seed) ^ (zlib.crc32(stream.encode("utf-8")) << 32)) & _MASK
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)
        self.seed = int(seed)
        self.stream = stream

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles in ``[0, 1)``."""
        return _backend.kernels.xoshiro_uniform(self.state, int(n))

    def uniform(self, shape, low: float, high: float) -> np.ndarray:
        shape = tuple(shape) if np.ndim(shape) else (int(shape),)
        u = self.random(int(np.prod(shape)))
        return (low + (high - low) * u).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``arange(n)``."""
        perm = np.arange(n)
        u = self.random(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def normal(self, shape) -> np.ndarray:
        """Box-Muller standard normals (used only for synthetic fixtures)."""
        shape = tuple(shape) if np.ndim(shape) else (int(shape),)
        n = int(np.prod(shape))
        u = self.random(2 * ((n + 1) // 2)).reshape(2, -1)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        z = np.concatenate([r * np.cos(2 * np.pi * u[1]), r * np.sin(2 * np.pi * u[1])])
        return z[:n].reshape(shape)


def seeded_init(shape, fan_in: int, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) draws."""
    bound = 1.0 / np.sqrt(max(int(fan_in), 1))
    return rng.uniform(shape, -bound, bound).astype(dtype)
