"""Kernel backend selection.

The hot per-point loops (bucket-grid neighbor search, batched stencil
assembly, the point insertion/merge sweeps) exist twice: a numba @njit
implementation and a pure-numpy implementation with identical signatures.
The active backend is chosen once at import time from the environment:

    GFDMLAB_BACKEND=numba   force numba (ImportError if unavailable)
    GFDMLAB_BACKEND=numpy   force the pure-numpy path
    GFDMLAB_BACKEND=auto    numba when importable, numpy otherwise (default)

``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

_CHOICES = ("auto", "numba", "numpy")


def _resolve(name: str) -> str:
    if name not in _CHOICES:
        raise ValueError(f"GFDMLAB_BACKEND must be one of {_CHOICES}, got {name!r}")
    if name == "numpy":
        return "numpy"
    if name == "numba":
        import numba  # noqa: F401  (fail loudly if forced but missing)

        return "numba"
    try:
        import numba  # noqa: F401

        return "numba"
    except ImportError:
        return "numpy"


BACKEND = _resolve(os.environ.get("GFDMLAB_BACKEND", "auto").strip().lower())
USE_NUMBA = BACKEND == "numba"


def get_kernels():
    """Return the active kernel module (lazy import keeps startup cheap)."""
    if USE_NUMBA:
        from gfdmlab import _kernels_numba as k
    else:
        from gfdmlab import _kernels_numpy as k
    return k


def get_kernels_named(name: str):
    """Return a specific kernel module, independent of the env flag."""
    if _resolve(name) == "numba":
        from gfdmlab import _kernels_numba as k
    else:
        from gfdmlab import _kernels_numpy as k
    return k
