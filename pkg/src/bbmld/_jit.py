"""JIT switch for the hot kernels.

Kernels are written once as plain numpy/Python and compiled with numba unless
``BBMLD_DISABLE_JIT`` is set to a truthy value, in which case the same source
runs interpreted. Both paths consume the random streams identically, so
results are bit-identical (only speed differs).
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("BBMLD_DISABLE_JIT", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USING_NUMBA = numba is not None and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise the identity decorator."""
    if USING_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if USING_NUMBA else "numpy"
