"""Numba dispatch for the hot kernels.

Set ``MFPOF_DISABLE_NUMBA=1`` in the environment (before import) to force
the pure-numpy code paths. Both paths consume the same pre-drawn random
numbers, so they agree to floating-point rounding.
"""
import os
import warnings

_DISABLED = os.environ.get("MFPOF_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    if not _DISABLED:
        warnings.warn("numba is not installed - falling back to numpy kernels")
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f
