"""Kernel backend selection.

Hot loops are compiled with numba when it is importable and the environment
variable ``PARBALS_DISABLE_NUMBA`` is unset (or ``0``).  Otherwise the pure
numpy implementations in :mod:`parbals._kernels` are used.  Both paths are
deterministic; they are not guaranteed to agree bit-for-bit with each other.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba

    HAS_NUMBA = True
    # TBB in the base image is too old; omp is safe for concurrent callers.
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "omp"

except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _flag("PARBALS_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def thread_cap():
    """Worker cap from ``PARBALS_THREADS`` (None when unset)."""
    raw = os.environ.get("PARBALS_THREADS", "").strip()
    if not raw:
        return None
    value = int(raw)
    if value < 1:
        raise ValueError(f"PARBALS_THREADS must be >= 1, got {value}")
    return value


def configure_threads():
    cap = thread_cap()
    if cap is not None and HAS_NUMBA:
        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
    return cap
