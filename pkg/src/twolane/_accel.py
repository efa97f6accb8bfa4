"""Optional numba acceleration.

Hot loops are written once as plain Python over numpy arrays and compiled
with :func:`numba.njit` when numba is importable.  Setting the environment
variable ``TWOLANE_DISABLE_NUMBA=1`` (read at import time) selects the
vectorised numpy fallbacks instead, which is how the two paths are compared
in the test suite and in ``benchmarks/bench_numba.py``.
"""

import os

_DISABLED = os.environ.get("TWOLANE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:  # pragma: no cover - exercised implicitly
    if _DISABLED:
        raise ImportError("disabled by TWOLANE_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
