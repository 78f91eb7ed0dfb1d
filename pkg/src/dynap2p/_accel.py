"""Backend selection for the numeric kernels.

Set ``DYNAP2P_NUMBA=0`` before import to run every kernel as plain
Python/NumPy. Otherwise numba is used when it can be imported.
"""

import os

_flag = os.environ.get("DYNAP2P_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    if not _wanted:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

NUMBA_ENABLED = _numba is not None
BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def njit(fn):
    if NUMBA_ENABLED:
        return _numba.njit(cache=True, nogil=True)(fn)
    return fn
