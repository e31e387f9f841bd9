"""Optional numba acceleration.

Set ``NASHVALUE_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/numpy. Both paths execute the same source, so results agree to
floating-point roundoff.
"""
import os

try:
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("NASHVALUE_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")


def optional_njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity otherwise."""
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return optional_njit()(args[0])

    def decorator(func):
        if USE_NUMBA:
            return _njit(*args, **kwargs)(func)
        return func

    return decorator
