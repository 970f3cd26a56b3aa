"""Kernel backend selection.

Hot loops are written once in plain Python/NumPy and compiled with numba when
it is importable. Set ``DEPTHFLOW_NO_NUMBA=1`` to force the pure NumPy path.
"""
import os

_disabled = os.environ.get("DEPTHFLOW_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(func):
    """Compile ``func`` with numba if available, else return ``None``."""
    if _njit is None:
        return None
    return _njit(cache=True)(func)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
