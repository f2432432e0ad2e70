"""Dense linear algebra helpers and seeded random streams.

Matrices and vectors are plain float64 NumPy arrays; :func:`as_matrix` and
:func:`as_vector` are the validating constructors.
"""

import zlib

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DomainError, ShapeError


def as_matrix(data, rows=None, cols=None):
    """Validate ``data`` as a finite 2-D float64 array, optionally reshaping
    a flat row-major buffer to ``(rows, cols)``."""
    a = np.array(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if a.size != rows * cols:
            raise ShapeError(f"data length {a.size} != {rows}x{cols}")
        a = a.reshape(rows, cols)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix contains NaN or Inf")
    return a


def as_vector(data):
    v = np.array(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector contains NaN or Inf")
    return v


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sym_eig(m, top_d, sym_tol=1e-9, max_sweeps=100):
    """Top ``top_d`` eigenpairs of a symmetric matrix.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Symmetric to within ``sym_tol`` (relative to its largest entry).
    top_d : int
        Number of leading eigenpairs, ``1 <= top_d <= n``.

    Returns
    -------
    eigenvalues : ndarray, shape (top_d,)
        Largest eigenvalues, descending.
    eigenvectors : ndarray, shape (top_d, n)
        Orthonormal eigenvectors stored as rows.

    Raises
    ------
    DomainError
        If ``m`` is not square and symmetric.
    ConvergenceError
        If the Jacobi sweeps hit ``max_sweeps`` first.
    """
    m = as_matrix(m)
    n = m.shape[0]
    if m.shape[1] != n:
        raise DomainError(f"sym_eig needs a square matrix, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > sym_tol * scale:
        raise DomainError("sym_eig input is not symmetric")
    if not 1 <= top_d <= n:
        raise DomainError(f"top_d must lie in [1, {n}], got {top_d}")
    sym = 0.5 * (m + m.T)
    w, V, _, converged = _kernels.jacobi_eigh(sym, max_sweeps=max_sweeps)
    if not converged:
        raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    order = np.argsort(-w, kind="stable")[:top_d]
    return w[order].copy(), np.ascontiguousarray(V[:, order].T)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))


def fork_rng(seed, *keys):
    """Independent generator for consumer ``keys`` under run seed ``seed``.

    The stream depends only on ``(seed, keys)``, never on how many other
    consumers were forked before, so every stage is reproducible on its own.
    """
    spawn_key = tuple(zlib.crc32(str(k).encode("utf-8")) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))


def gaussian_sample(rng, n, mean=0.0, variance=1.0):
    if variance < 0:
        raise DomainError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return np.full(int(n), float(mean))
    return mean + np.sqrt(variance) * rng.standard_normal(int(n))
