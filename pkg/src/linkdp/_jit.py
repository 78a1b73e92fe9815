"""Backend switch for the compiled kernels.

Set ``LINKDP_DISABLE_JIT=1`` to run every kernel through its pure Python /
numpy path. The flag is read once at import time.
"""

from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

JIT_OPTIONS = {
    "nopython": True,
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a hard dependency
        return False
    return True


USE_NUMBA = (
    os.environ.get("LINKDP_DISABLE_JIT", "").strip().lower() in _FALSY
    and _numba_available()
)


def njit(func):
    """Compile ``func`` with numba. Always compiles, regardless of the flag.

    Callers pick between the compiled and plain variants with :func:`select`.
    """
    import numba

    return numba.jit(**JIT_OPTIONS)(func)


def select(compiled, fallback):
    return compiled if USE_NUMBA else fallback


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
