"""Optional numba acceleration.

Set ``DSM_NUMBA=0`` in the environment to disable compiled kernels; the
package then runs its pure-numpy code paths. The flag is read once at import.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _requested() -> bool:
    return os.environ.get("DSM_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


USE_NUMBA = HAVE_NUMBA and _requested()


def njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, otherwise a no-op decorator."""
    if USE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def deco(fn):
        return fn

    return deco
