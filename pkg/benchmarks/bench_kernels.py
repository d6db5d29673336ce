"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from lobforge.nn import _pykernels

try:
    from lobforge.nn import _ckernels
except ImportError:
    _ckernels = None


def cases(k):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 30, 52, 4))  # NCHW, CNN2LSTM-sized input
    cols = k.im2col(x, 3, 3, 1, 1)
    img = rng.standard_normal((32, 32, 50, 4))
    out, arg = k.maxpool_forward(img, 2, 2, 2, 2)
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    return {
        "im2col 32x30x52x4 k3": lambda: k.im2col(x, 3, 3, 1, 1),
        "col2im 32x30x52x4 k3": lambda: k.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool fwd 32x32x50x4": lambda: k.maxpool_forward(img, 2, 2, 2, 2),
        "maxpool bwd 32x32x50x4": lambda: k.maxpool_backward(out, arg, img.shape, 2, 2, 2, 2),
        "xoshiro 1e6 draws": lambda: k.xoshiro_uniform(state, 1_000_000),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    results = {}
    for name, mod in backends.items():
        for label, fn in cases(mod).items():
            results.setdefault(label, {})[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    print(f"{'kernel':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, r in results.items():
        py, cy = r["python"] * 1e3, r.get("cython", float("nan")) * 1e3
        print(f"{label:28s} {py:10.2f} {cy:10.2f} {py / cy:8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
