"""Numba/numpy kernel backend selection.

The hot inner loops in :mod:`vitp.kernels` exist in two variants: a numba
``@njit`` version and a pure-numpy fallback. ``VITP_NUMBA`` picks the active
one at import time:

    VITP_NUMBA=1   require numba (ImportError if unavailable)
    VITP_NUMBA=0   force the numpy fallbacks
    unset          use numba when importable, numpy otherwise

Both variants compute the same math; they are not guaranteed to agree
bitwise (summation order differs), only within float tolerance.
"""

import os

_FLAG = os.environ.get("VITP_NUMBA", "").strip()

if _FLAG == "0":
    _HAS_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        _HAS_NUMBA = True
    except ImportError:
        if _FLAG == "1":
            raise
        _HAS_NUMBA = False


def use_numba() -> bool:
    """True when the numba kernel variants are the active backend."""
    return _HAS_NUMBA


def backend_name() -> str:
    return "numba" if _HAS_NUMBA else "numpy"
