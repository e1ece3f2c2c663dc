"""Numeric backend selection.

Hot kernels ship in two builds: numba @njit and pure numpy/python.
The active build is chosen once at import time from the HAYRAG_BACKEND
environment variable ("numba" or "numpy"). Default is numba when
importable, numpy otherwise. `benchmarks/backend_bench.py` compares the
two on the same inputs.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAVE_NUMBA = False

_ENV_VAR = "HAYRAG_BACKEND"
_requested = os.environ.get(_ENV_VAR, "").strip().lower()

if _requested == "numba":
    if not HAVE_NUMBA:
        raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
    BACKEND = "numba"
elif _requested == "numpy":
    BACKEND = "numpy"
elif _requested == "":
    BACKEND = "numba" if HAVE_NUMBA else "numpy"
else:
    raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {_requested!r}")


def njit_or_plain(func):
    """Compile under the numba backend, pass through under numpy."""
    if BACKEND == "numba":
        return numba.njit(cache=True)(func)
    return func


def njit_always(func):
    """Compile regardless of backend; None when numba is unavailable.

    Used by the exhaustive filter-equivalence check, which is only
    feasible compiled.
    """
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return None
