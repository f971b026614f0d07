"""Kernel backend selection: numba-jitted loops or pure numpy.

The default backend is "numba" whenever numba imports cleanly; set the
environment variable ``CROWDNAV_BACKEND=numpy`` (or call :func:`set_backend`)
to force the pure-numpy fallback.  Every hot kernel in the package ships both
implementations and dispatches through :func:`use_numba` at call time, so the
backend can be flipped mid-process (the benchmark command does exactly that).
"""

import os

try:
    from numba import njit  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        """Stand-in decorator so kernel modules import without numba."""

        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


_ENV_CHOICE = os.environ.get("CROWDNAV_BACKEND", "").strip().lower()
if _ENV_CHOICE not in ("", "numba", "numpy"):
    raise ValueError(
        f"CROWDNAV_BACKEND must be 'numba' or 'numpy', got {_ENV_CHOICE!r}"
    )

_backend = "numpy"
if NUMBA_AVAILABLE and _ENV_CHOICE != "numpy":
    _backend = "numba"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not importable")
    _backend = name


def use_numba() -> bool:
    return _backend == "numba"
