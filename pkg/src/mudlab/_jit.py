"""Numba switch.

Kernels are compiled with numba unless the environment variable
``MUDLAB_NUMBA`` is set to ``0`` (or ``false``/``off``/``no``) before the
package is imported, in which case the pure-numpy implementations are used.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_flag = os.environ.get("MUDLAB_NUMBA", "1").strip().lower()

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "off", "no")


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged without numba."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
