"""Numba switch.

Set ``GRIDLOC_DISABLE_NUMBA=1`` to force the pure-numpy kernels. Numba is
also skipped silently when it cannot be imported.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("GRIDLOC_DISABLE_NUMBA", "0").strip().lower() in _FALSY


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _numba_requested()


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Kernels are always compiled when available so tests and benchmarks can
    compare both paths; ``USE_NUMBA`` only decides which one the public
    functions dispatch to.
    """
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
