"""Numba toggle shared by the hot kernels.

Set ``EV_LAB_NUMBA=0`` to force the pure-numpy code paths (useful for
debugging and for the benchmark comparison).  The flag is read once at
import time.
"""
import os
import warnings

_FLAG = os.environ.get("EV_LAB_NUMBA", "1").strip().lower()

try:
    import numba
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("0", "false", "no", "off")


def threads():
    """Thread cap from ``EV_LAB_THREADS`` (None when unset)."""
    value = os.environ.get("EV_LAB_THREADS")
    if not value:
        return None
    n = int(value)
    if n < 1:
        raise ValueError("EV_LAB_THREADS must be a positive integer")
    return n


def apply_threads(n):
    """Cap numba's thread pool at ``n``; a no-op when that is no cap at all."""
    if not USE_NUMBA or n is None or n >= numba.config.NUMBA_NUM_THREADS:
        return
    with warnings.catch_warnings():
        # numba probes the TBB layer first and warns when it is too old
        warnings.simplefilter("ignore")
        numba.set_num_threads(n)


apply_threads(threads())
