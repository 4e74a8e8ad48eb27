"""JIT switch for the hot loops.

Kernels are written in the subset of Python/NumPy that numba understands.
Setting ``SAMPFIT_DISABLE_NUMBA=1`` before import runs the very same
functions in the interpreter, which is slow but useful for debugging and for
the benchmark that compares both paths.  Every decorated kernel exposes the
original function as ``.py_func`` either way.
"""
import os

_FLAG = os.environ.get("SAMPFIT_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    DISABLED = True

NUMBA_ENABLED = not DISABLED


def jit(func):
    """``numba.njit(cache=True)`` unless JIT is disabled."""
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(func)
    func.py_func = func
    return func
