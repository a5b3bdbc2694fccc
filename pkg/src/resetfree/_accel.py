"""Optional numba acceleration.

Set ``RESETFREE_NUMBA=0`` in the environment to force the pure-numpy kernels.
The flag is read once, at import time.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("RESETFREE_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched when numba is off."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, fastmath=False)(func)


def pick(jitted, fallback):
    return jitted if USE_NUMBA else fallback
