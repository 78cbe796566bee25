"""Optional numba acceleration.

Hot kernels are written once as plain Python loops over numpy arrays and
compiled with ``numba.njit`` when numba is importable.  Setting the
environment variable ``FREELAB_DISABLE_NUMBA=1`` selects the pure-numpy
fallbacks instead; the public functions then dispatch to vectorized
implementations that give identical results.
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("FREELAB_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")
NUMBA_AVAILABLE = _HAVE_NUMBA and not NUMBA_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if NUMBA_AVAILABLE:
        return numba.njit(*args, cache=True, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if NUMBA_AVAILABLE else "numpy"
