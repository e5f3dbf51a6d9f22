"""Numba switch shared by the kernel modules.

Set ``TREELET_DISABLE_NUMBA=1`` to force the pure-numpy code paths. When numba
is missing the numpy paths are used automatically.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

DISABLED = os.environ.get("TREELET_DISABLE_NUMBA", "").strip().lower() not in _FALSY
USE_NUMBA = HAS_NUMBA and not DISABLED


def njit(func):
    """Compile `func` in nopython mode when numba is importable, else return it as is."""
    if HAS_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func
