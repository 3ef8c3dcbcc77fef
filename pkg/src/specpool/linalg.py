"""Dense float64 linear algebra: products and a deterministic symmetric eigensolver.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The
eigensolver runs cyclic Jacobi sweeps (compiled when available, see
:mod:`specpool.backend`), sorts eigenpairs ascending and fixes each
eigenvector's sign so results are reproducible run to run.
"""

from typing import NamedTuple

import numpy as np

from . import backend
from .errors import ConfigurationError, InputError, NumericalError

MAX_SWEEPS = 64
OFFDIAG_RTOL = 1e-12
SYMMETRY_TOL = 1e-9


class EighResult(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def inf_norm(a):
    """Max absolute row sum; works on a single matrix or a stack."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return np.zeros(a.shape[:-2]) if a.ndim > 2 else 0.0
    return np.abs(a).sum(axis=-1).max(axis=-1)


def canonicalize_signs(vectors):
    """Flip columns so each one's largest-magnitude entry is non-negative.

    Ties on magnitude resolve to the lowest row index. Accepts ``(k, k)`` or
    a stack ``(n, k, k)``; returns a new array.
    """
    v = np.array(vectors, dtype=np.float64, copy=True)
    squeeze = v.ndim == 2
    if squeeze:
        v = v[None]
    lead = np.argmax(np.abs(v), axis=1)  # (n, k): first occurrence wins ties
    picked = np.take_along_axis(v, lead[:, None, :], axis=1)[:, 0, :]
    flip = np.where(picked < 0.0, -1.0, 1.0)
    v *= flip[:, None, :]
    return v[0] if squeeze else v


def jacobi_eigh_batch(stack, sweeps_fn=None):
    """Eigendecompose a stack ``(n, k, k)`` of symmetric matrices.

    Returns ``(eigenvalues (n, k), eigenvectors (n, k, k))`` with ascending
    eigenvalues and sign-canonical columns.
    """
    a = np.asarray(stack, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise InputError(f"expected a stack of square matrices, got shape {a.shape}")
    n, k, _ = a.shape
    if n == 0:
        return np.zeros((0, k)), np.zeros((0, k, k))
    if not np.all(np.isfinite(a)):
        raise InputError("matrix has non-finite entries")
    norm = inf_norm(a)
    asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2))
    bad = asym > SYMMETRY_TOL * np.maximum(1.0, norm)
    if bad.any():
        i = int(np.argmax(bad))
        raise InputError(f"matrix {i} is not symmetric (max asymmetry {asym[i]:.3e})")
    sym = 0.5 * (a + np.swapaxes(a, 1, 2))
    tol = OFFDIAG_RTOL * inf_norm(sym)
    fn = sweeps_fn or backend.jacobi_sweeps
    diag, vecs, sweeps, off = fn(sym, tol, MAX_SWEEPS)
    if np.any(sweeps < 0):
        i = int(np.argmax(sweeps < 0))
        raise NumericalError(
            f"Jacobi did not converge in {MAX_SWEEPS} sweeps "
            f"(matrix {i}, residual off-diagonal {off[i]:.3e}, tolerance {tol[i]:.3e})"
        )
    order = np.argsort(diag, axis=1, kind="stable")
    vals = np.take_along_axis(diag, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    return vals, canonicalize_signs(vecs)


def jacobi_eigh(a, sweeps_fn=None):
    """Eigendecomposition of one symmetric matrix.

    >>> r = jacobi_eigh(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    >>> np.round(r.eigenvalues, 12).tolist()
    [0.0, 2.0]
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"expected a square matrix, got shape {a.shape}")
    vals, vecs = jacobi_eigh_batch(a[None], sweeps_fn)
    return EighResult(vals[0], vecs[0])
