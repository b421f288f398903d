"""Backend selection for the hot kernels.

Set ``IMPULSELAB_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
"""
import os

_FLAG = os.environ.get("IMPULSELAB_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when the numba backend is active, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
