"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is picked once at import time. Set ``PACSIM_DISABLE_NUMBA=1`` to
force the numpy path; it is also used automatically if numba fails to import.
Both backends return identical integers.
"""

import os

from pacsim.kernels import _numpy

BACKEND = "numpy"

if os.environ.get("PACSIM_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from pacsim.kernels import _numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _numba = None
    else:
        BACKEND = "numba"
else:
    _numba = None

_impl = _numba if BACKEND == "numba" else _numpy

bit_counts = _impl.bit_counts
and_popcount = _impl.and_popcount
cross_plane_counts = _impl.cross_plane_counts
paired_plane_counts = _impl.paired_plane_counts


def backends():
    """Map of available backend name -> implementation module."""
    out = {"numpy": _numpy}
    if _numba is not None:
        out["numba"] = _numba
    return out


__all__ = [
    "BACKEND",
    "and_popcount",
    "backends",
    "bit_counts",
    "cross_plane_counts",
    "paired_plane_counts",
]
