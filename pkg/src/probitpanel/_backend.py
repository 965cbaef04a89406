"""Backend selection for the hot kernels.

Kernels are written once in numba-compatible Python. When numba is importable
and ``PROBITPANEL_BACKEND`` is not set to ``numpy``, they are compiled with
``@njit``; otherwise the vectorized numpy implementations are used and the
scalar kernels run as plain Python.
"""

from __future__ import annotations

import os

_requested = os.environ.get("PROBITPANEL_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(
        f"PROBITPANEL_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

# omp is safe for concurrent calls from several chain threads
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    if _requested == "numpy":
        raise ImportError("numpy backend requested")
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False
    prange = range

    def njit(*args, **kwargs):  # type: ignore[misc]
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(fn):
            return fn

        return decorator


BACKEND = "numba" if HAS_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    """Set the numba worker count; a no-op on the numpy backend."""
    if n is None or not HAS_NUMBA:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
