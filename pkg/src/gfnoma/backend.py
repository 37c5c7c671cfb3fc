"""Kernel backend selection: numba-compiled hot loops with a numpy fallback.

Every hot kernel in this package is written once, in numpy style that numba
can compile.  The active variant is chosen at import time from the GFNM_BACKEND
environment variable:

    GFNM_BACKEND=numba   force JIT kernels (error if numba is missing)
    GFNM_BACKEND=numpy   force the plain-numpy path
    unset / auto         use numba when importable, else numpy

Both paths compute the same math; they may disagree at the last few ulps
because numpy's SIMD transcendentals and libm round differently.  Anything
that must be byte-stable across backends (RNG streams, frame synthesis,
file containers) deliberately avoids these kernels.
"""

import os
import warnings

_choice = os.environ.get("GFNM_BACKEND", "auto").strip().lower()

if _choice in ("numpy", "np", "off", "0"):
    HAVE_NUMBA = False
    USE_NUMBA = False
elif _choice in ("numba", "jit", "on", "1", "auto", ""):
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False
        if _choice not in ("auto", ""):
            warnings.warn("GFNM_BACKEND=numba requested but numba is not "
                          "importable; falling back to numpy kernels")
    USE_NUMBA = HAVE_NUMBA
else:
    raise RuntimeError(f"unrecognized GFNM_BACKEND value: {_choice!r}")

BACKEND = "numba" if USE_NUMBA else "numpy"


def jit_kernel(func):
    """Compile ``func`` with numba when the JIT backend is active.

    Returns the function unchanged on the numpy path, so the same source
    serves both backends.
    """
    if USE_NUMBA:
        from numba import njit

        return njit(cache=True)(func)
    return func


def compile_for_benchmark(func):
    """Always-JIT variant used by the backend benchmark, independent of
    the process-wide backend selection."""
    from numba import njit

    return njit(cache=True)(func)
