"""Kernel backend selection.

The hot inner loops (causal depthwise convolution, contagion path sampling,
attention score products) exist twice: a numba ``@njit`` version and a pure
numpy twin. The active backend is chosen once at import time from the
``SETSEQ_BACKEND`` environment variable:

    SETSEQ_BACKEND=numba   force numba (raises if numba is unavailable)
    SETSEQ_BACKEND=numpy   force the pure numpy fallbacks
    unset                  numba when importable, numpy otherwise

Both backends produce bit-identical results; ``benchmarks/bench_kernels.py``
compares their speed.
"""

from __future__ import annotations

import os

_ENV_VAR = "SETSEQ_BACKEND"
_VALID = ("numba", "numpy")


def _detect() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice and choice not in _VALID:
        raise ValueError(
            f"{_ENV_VAR} must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


ACTIVE_BACKEND: str = _detect()


def use_numba() -> bool:
    return ACTIVE_BACKEND == "numba"
