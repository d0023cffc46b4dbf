"""Numba switch.

Hot kernels are written once as plain numpy code and compiled with
``numba.njit`` unless ``EEGCN_DISABLE_NUMBA`` is set to a truthy value (or
numba is not importable).  Either way every kernel exposes ``py_func`` so the
pure-numpy path stays reachable for tests and benchmarks.
"""

import os

_FALSEY = {"", "0", "false", "no", "off"}

USE_NUMBA = os.environ.get("EEGCN_DISABLE_NUMBA", "").strip().lower() in _FALSEY

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba ships with the test env
        USE_NUMBA = False


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched when disabled."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    fn.py_func = fn
    return fn


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
