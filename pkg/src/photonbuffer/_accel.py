"""Optional numba acceleration.

Hot kernels are written twice: a loop form compiled with numba and a
vectorised numpy form. Setting ``PHOTONBUFFER_DISABLE_NUMBA=1`` (or running
without numba installed) selects the numpy path everywhere.
"""

from __future__ import annotations

import os

DISABLE_ENV = "PHOTONBUFFER_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _disabled_by_env() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    The compiled version is built even when the env flag disables it, so the
    benchmark can still compare both paths; dispatch happens in ``kernels``.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
