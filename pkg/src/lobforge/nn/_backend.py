"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``LOBFORGE_PURE_PYTHON=1`` is set, the numpy implementation takes over.
Both produce bit-identical results.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)


def _select():
    if os.environ.get("LOBFORGE_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        log.debug("compiled kernels unavailable, using numpy fallback")
        return _pykernels
    return _ckernels


kernels = _select()
BACKEND = kernels.BACKEND


def available_backends() -> dict:
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
