"""Gaussian moments of polynomials of degree at most four.

A ``Polynomial4`` represents

    c0 + sum_ij c2[i,j] u_i u_j + sum_ijkl c4[i,j,k,l] u_i u_j u_k u_l,
    u_i = 1j**phase[i] * z_i,

so that coefficients stay real when some variables are purely imaginary
(derivative legs, imaginary shifts). Substituting ``old = lin @ new + noise``
with gaussian noise of covariance ``cov`` and averaging over the noise maps
the coefficients as

    c4' = lin^{(x)4} c4
    c2' = lin^T (c2 + 6 c4:cov) lin
    c0' = c0 + c2:cov + 3 c4:cov:cov

which is Wick's theorem applied to a quartic polynomial.
"""
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import ParityError, PhaseBookkeepingError


def symmetrize4(t):
    """Average of a rank-4 tensor over all 24 index permutations."""
    return sum(np.transpose(t, p) for p in permutations(range(4))) / 24.0


def symmetrize2(t):
    return 0.5 * (t + t.T)


@dataclass
class Polynomial4:
    c0: complex
    c2: np.ndarray
    c4: np.ndarray
    phase: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.c2.shape[0]
        if self.c2.shape != (n, n) or self.c4.shape != (n,) * 4:
            raise ValueError(f"inconsistent shapes {self.c2.shape} and {self.c4.shape}")
        if self.phase is None:
            self.phase = np.zeros(n, dtype=int)
        self.phase = np.asarray(self.phase, dtype=int)

    @property
    def dim(self):
        return self.c2.shape[0]

    @classmethod
    def zeros(cls, n, phase=None, dtype=float):
        return cls(0.0, np.zeros((n, n), dtype), np.zeros((n,) * 4, dtype), phase)

    def canonical(self):
        """Copy with ``c2`` and ``c4`` in fully symmetrized form."""
        return Polynomial4(self.c0, symmetrize2(self.c2), symmetrize4(self.c4), self.phase.copy())

    def _factors(self):
        return 1j ** self.phase

    def complex_coefficients(self):
        """Coefficients with respect to the plain variables ``z``."""
        f = self._factors()
        c2 = self.c2 * np.multiply.outer(f, f)
        c4 = self.c4 * np.einsum("i,j,k,l->ijkl", f, f, f, f)
        return complex(self.c0), c2, c4

    def evaluate(self, z):
        c0, c2, c4 = self.complex_coefficients()
        z = np.asarray(z)
        return c0 + z @ c2 @ z + np.einsum("ijkl,i,j,k,l->", c4, z, z, z, z)

    def __add__(self, other):
        if not np.array_equal(self.phase, other.phase):
            raise PhaseBookkeepingError("cannot add polynomials with different phase weights")
        return Polynomial4(self.c0 + other.c0, self.c2 + other.c2, self.c4 + other.c4, self.phase.copy())


def tdot4(t, lin):
    """``t'_{abcd} = sum t_ijkl lin_ia lin_jb lin_kc lin_ld``."""
    for _ in range(4):
        t = np.tensordot(t, lin, axes=([0], [0]))
    return t


def contract_rows(t, lin, rows):
    """Rows ``rows`` along the first axis of ``tdot4(t, lin)``, computed directly."""
    out = np.tensordot(t, lin[:, rows], axes=([0], [0]))
    out = np.moveaxis(out, -1, 0)
    for _ in range(3):
        out = np.tensordot(out, lin, axes=([1], [0]))
    return out


def substitute(c0, c2, c4, lin, cov=None):
    """Average of the polynomial over ``old = lin @ new + noise``.

    Works for real or complex arrays; returns ``(c0', c2', c4')``.
    """
    if cov is None:
        return c0, lin.T @ c2 @ lin, tdot4(c4, lin)
    c4s = np.tensordot(c4, cov, axes=([2, 3], [0, 1]))
    n0 = c0 + np.sum(c2 * cov) + 3 * np.sum(c4s * cov)
    n2 = lin.T @ (c2 + 6 * c4s) @ lin
    return n0, n2, tdot4(c4, lin)


def transform_real(poly, lin, cov=None):
    """Real-frame substitution ``old = i lin new + noise``.

    When ``cov`` is given the map carries an overall factor ``i``: degree-two
    coefficients pick up ``i**2 = -1`` and degree-four ones ``i**4 = 1``.
    ``cov`` is the real-frame noise covariance (with the phases of the legs
    already divided out). Without ``cov`` the map is the plain real
    substitution ``old = lin new``.
    """
    r0, r2, r4 = poly
    if cov is None:
        return r0, lin.T @ r2 @ lin, tdot4(r4, lin)
    r4s = np.tensordot(r4, cov, axes=([2, 3], [0, 1]))
    n0 = r0 + np.sum(r2 * cov) + 3 * np.sum(r4s * cov)
    n2 = -(lin.T @ (r2 + 6 * r4s) @ lin)
    return n0, n2, tdot4(r4, lin)


def pair_moment(qinv, i, j):
    """``<x_i x_j>`` under ``exp(-x Q x / 2)``: the propagator ``Q^{-1}_{ij}``."""
    qinv = np.asarray(qinv)
    n = qinv.shape[0]
    for k in (i, j):
        if not 0 <= k < n:
            raise IndexError(f"index {k} out of range for dimension {n}")
    return float(qinv[i, j])


def quartic_moment(qinv, i, j, k, l):
    """``<x_i x_j x_k x_l>`` as the sum over the three pairings."""
    g = lambda a, b: pair_moment(qinv, a, b)
    return g(i, j) * g(k, l) + g(i, k) * g(j, l) + g(i, l) * g(j, k)


def moment(cov, idx, mean=None):
    """Gaussian moment ``<prod_k x_{idx[k]}>`` for up to four indices.

    With a non-zero ``mean`` every factor is expanded as mean plus centred
    fluctuation and the centred parts are paired.
    """
    cov = np.asarray(cov)
    idx = list(idx)
    if len(idx) > 4:
        raise ValueError("moments above degree four are not supported")
    n = cov.shape[0]
    for k in idx:
        if not 0 <= k < n:
            raise IndexError(f"index {k} out of range for dimension {n}")
    mean = np.zeros(n) if mean is None else np.asarray(mean)
    total = 0.0
    m = len(idx)
    for mask in range(1 << m):
        centred = [idx[b] for b in range(m) if mask >> b & 1]
        fixed = np.prod([mean[idx[b]] for b in range(m) if not mask >> b & 1]) if m else 1.0
        total += fixed * _centred_moment(cov, centred)
    return float(total)


def _centred_moment(cov, idx):
    if not idx:
        return 1.0
    if len(idx) % 2:
        return 0.0
    if len(idx) == 2:
        return cov[idx[0], idx[1]]
    i, j, k, l = idx
    return cov[i, j] * cov[k, l] + cov[i, k] * cov[j, l] + cov[i, l] * cov[j, k]


def integrate_polynomial(p, qinv, shift, n_inner, residue_tol=1e-10):
    """Integrate out the first ``n_inner`` variables of ``p``.

    The inner fields are gaussian with covariance ``qinv`` and mean
    ``1j * shift @ outer``: the imaginary dressing of inner lines by
    ``Q^{-1} C``. The remaining variables of ``p`` are the outer fields. The
    result is a polynomial over the outer fields with the same phase weights
    as the outer legs of ``p``; an imaginary residue above ``residue_tol``
    relative means the phase bookkeeping is inconsistent.
    """
    n = p.dim
    n_outer = n - n_inner
    if shift.shape != (n_inner, n_outer) or qinv.shape != (n_inner, n_inner):
        raise ValueError("shift/kernel dimensions do not match the polynomial")
    if np.any(p.phase[:n_inner]):
        raise ParityError("inner fields must be real lattice fields (phase 0)")
    c0, c2, c4 = p.complex_coefficients()
    lin = np.vstack([1j * shift, np.eye(n_outer)])
    cov = np.zeros((n, n))
    cov[:n_inner, :n_inner] = qinv
    n0, n2, n4 = substitute(c0, c2, c4, lin, cov)
    out_phase = p.phase[n_inner:]
    f = 1j ** out_phase
    r2 = n2 / np.multiply.outer(f, f)
    r4 = n4 / np.einsum("i,j,k,l->ijkl", f, f, f, f)
    scale = max(abs(n0), np.abs(n2).max(initial=0.0), np.abs(n4).max(initial=0.0), 1e-300)
    resid = max(abs(np.imag(n0)), np.abs(r2.imag).max(initial=0.0), np.abs(r4.imag).max(initial=0.0))
    if resid > residue_tol * scale:
        raise PhaseBookkeepingError(f"imaginary residue {resid:.3e} relative to {scale:.3e}")
    return Polynomial4(float(np.real(n0)), r2.real, r4.real, out_phase.copy())


def integrate_loop(p, kernel, residue_tol=1e-10):
    """Integrate the inner links of a plaquette with the dressing ``i Q^{-1} C``."""
    shift = kernel.qinv @ kernel.c
    return integrate_polynomial(p, kernel.qinv, shift, kernel.q.shape[0], residue_tol)


def quadrature_moment(q, idx, order=8):
    """Tensor Gauss-Hermite evaluation of ``<prod x_idx>`` under ``exp(-x Q x / 2)``.

    The integral is taken in whitened coordinates ``x = L y`` with
    ``Q^{-1} = L L^T``. The rule is exact for polynomial degree below
    ``2*order``, and uses no pairing formula.
    """
    q = np.asarray(q, float)
    n = q.shape[0]
    lchol = np.linalg.cholesky(np.linalg.inv(q))
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / np.sqrt(2 * np.pi)
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for w in np.meshgrid(*([weights] * n), indexing="ij"):
        wgrid = wgrid * w
    y = np.stack([g.ravel() for g in grids])
    x = lchol @ y
    vals = np.ones(y.shape[1])
    for k in idx:
        vals = vals * x[k]
    return float(np.sum(wgrid.ravel() * vals))
