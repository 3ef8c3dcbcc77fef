"""Kernel backend selection.

The compiled extension is used when importable; set
``SPECPOOL_BACKEND=python`` to force the numpy fallback.
"""

import os

from . import _fallback

NAME = "python"
jacobi_sweeps = _fallback.jacobi_sweeps
set_max = _fallback.set_max
route_rows = _fallback.route_rows

if os.environ.get("SPECPOOL_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:  # extension not built
        _kernels = None
    if _kernels is not None:
        NAME = "cython"
        jacobi_sweeps = _kernels.jacobi_sweeps
        set_max = _kernels.set_max
        route_rows = _kernels.route_rows


def available():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return names
    return ["cython"] + names


def get(name, kernel="jacobi_sweeps"):
    """Return a kernel (``jacobi_sweeps``, ``set_max``, ``route_rows``) of a named backend."""
    if name == "python":
        return getattr(_fallback, kernel)
    if name == "cython":
        from . import _kernels

        return getattr(_kernels, kernel)
    raise ValueError(f"unknown backend {name!r}")
