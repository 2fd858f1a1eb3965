"""Numba acceleration toggle for the hot numeric kernels.

Kernels in :mod:`resmte.kernels` are written so the identical source runs
either JIT-compiled or as plain numpy. Compilation is on by default and is
disabled when the environment variable ``RESMTE_NO_NUMBA`` is set to
``1``/``true``/``yes`` or when numba is not importable. The flag is read
once at import time; ``bench/kernel_bench.py`` compares both paths.
"""

import os

_flag = os.environ.get("RESMTE_NO_NUMBA", "").strip().lower()
NUMBA_ENABLED = _flag not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False


def maybe_njit(**options):
    """Return numba.njit(**options) when enabled, identity otherwise."""

    def wrap(fn):
        if NUMBA_ENABLED:
            import numba

            return numba.njit(**options)(fn)
        return fn

    return wrap
