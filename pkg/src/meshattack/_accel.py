"""Numba switch.

Hot kernels come in two flavours: an ``@njit`` loop kernel and a vectorised
numpy implementation.  The numba flavour is used when numba imports and the
environment variable ``MESHATTACK_NUMBA`` is not ``0``.  Each backend is
deterministic on its own; the two agree to rounding, not bitwise.
"""
import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def numba_enabled():
    flag = os.environ.get("MESHATTACK_NUMBA", "1").strip().lower()
    return NUMBA_AVAILABLE and flag not in ("0", "false", "off", "no")


USE_NUMBA = numba_enabled()


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
