"""Dense linear algebra for real symmetric matrices.

All routines go through a single symmetric eigendecomposition with a fixed
ordering and sign convention, so repeated calls on identical input return
identical bytes.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidMatrix, SingularMatrix

PD_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SymSpectrum:
    """Eigenvalues in descending order and matching column eigenvectors."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T


def as_sym(m):
    """Validate ``m`` as a finite square matrix and return its symmetric part."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise InvalidMatrix(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidMatrix("matrix has non-finite entries")
    return 0.5 * (m + m.T)


def _fix_signs(vectors):
    """Make the largest-magnitude component of every column positive.

    Ties (equal magnitude up to 1e-12 relative) resolve to the lowest index.
    """
    mags = np.abs(vectors)
    top = mags.max(axis=0, keepdims=True)
    pivot = np.argmax(mags >= top * (1 - 1e-12), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig_sym(m):
    """Eigendecomposition of a symmetric matrix.

    Uses LAPACK's symmetric driver, then sorts eigenvalues in descending order
    and applies the deterministic sign convention of ``_fix_signs``.
    """
    s = as_sym(m)
    w, v = np.linalg.eigh(s)
    order = np.argsort(-w, kind="stable")
    return SymSpectrum(values=w[order], vectors=_fix_signs(v[:, order]))


def _check_pd(eig, pd_tolerance):
    w = eig.values
    tol = pd_tolerance * max(abs(w[0]), np.finfo(float).tiny)
    if w[-1] <= tol or w[0] <= 0:
        bad = int(np.argmax(w <= tol))
        raise SingularMatrix(bad, w[bad])


def inv_sym(m, pd_tolerance=PD_TOLERANCE):
    """Inverse of a positive definite symmetric matrix."""
    eig = eig_sym(m)
    _check_pd(eig, pd_tolerance)
    v = eig.vectors
    out = (v / eig.values) @ v.T
    return 0.5 * (out + out.T)


def logdet_sym(m, pd_tolerance=PD_TOLERANCE):
    """Log-determinant of a positive definite symmetric matrix."""
    eig = eig_sym(m)
    _check_pd(eig, pd_tolerance)
    return float(np.sum(np.log(eig.values)))


def solve_sym(m, b, pd_tolerance=PD_TOLERANCE):
    """Solve ``m x = b`` for positive definite symmetric ``m``."""
    eig = eig_sym(m)
    _check_pd(eig, pd_tolerance)
    v = eig.vectors
    b = np.asarray(b, dtype=float)
    proj = v.T @ b
    proj = proj / (eig.values[:, None] if proj.ndim == 2 else eig.values)
    return v @ proj
