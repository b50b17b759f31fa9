"""Kernel backend selection.

The hot numeric kernels in :mod:`bnnood.kernels` ship in two variants: numba
``@njit`` fused loops and pure-numpy vectorized code.  The active variant is
chosen once, at import time, from the ``BNNOOD_BACKEND`` environment variable:

* ``auto`` (default) -- use numba when it is importable, else fall back to numpy
* ``numba``          -- require numba; raise ImportError if it is missing
* ``numpy``          -- force the pure-numpy fallback

``benchmarks/bench_backends.py`` times the two variants against each other.
"""

import os

CHOICES = ("auto", "numba", "numpy")

ENV_VAR = "BNNOOD_BACKEND"


def _select() -> str:
    raw = os.environ.get(ENV_VAR, "auto").strip().lower()
    if raw not in CHOICES:
        raise ValueError(f"{ENV_VAR} must be one of {CHOICES}, got {raw!r}")
    if raw == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if raw == "numba":
            raise
        return "numpy"
    return "numba"


ACTIVE = _select()
USING_NUMBA = ACTIVE == "numba"

if USING_NUMBA:
    from numba import njit as _njit

    def jit(func):
        """Compile ``func`` with numba (nopython, disk-cached)."""
        return _njit(cache=True)(func)

else:

    def jit(func):
        """No-op stand-in when the numpy backend is active."""
        return func
