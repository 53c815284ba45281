"""Schmidt decomposition of the two-site gaussian kernel.

The normalized state ``W(x1, x2) = rho exp(-a/2 (x1**2 + x2**2) + b x1 x2)``
with ``a > |b|`` has the discrete Schmidt decomposition

    |W> = sqrt(1 - u**2) sum_n u**n |n> (x) |n>,

where ``|n>`` are harmonic-oscillator states of frequency
``kappa = sqrt(a**2 - b**2)``. Matching with Mehler's kernel gives
``b / a = 2 u / (1 + u**2)``, i.e. ``u = b / (a + kappa)``. A single
gaussian field at mixing ``b`` therefore carries the whole geometric
tower of singular values.
"""
from dataclasses import dataclass
import warnings

import numpy as np

from .errors import NonNormalizable, ResolutionWarning


@dataclass
class SchmidtSpectrum:
    u: float
    coefficients: np.ndarray
    entropy: float

    def tail_bound(self):
        """Weight ``sum_{n > n_max} w_n**2`` missing from the truncated list."""
        return self.u ** (2 * len(self.coefficients))

    def entropy_from_coefficients(self):
        p = self.coefficients ** 2
        p = p[p > 0]
        return float(-np.sum(p * np.log(p)))


def _check(a, b):
    if not (np.isfinite(a) and np.isfinite(b)) or a <= abs(b):
        raise NonNormalizable(f"kernel is normalizable only for a > |b|, got a={a}, b={b}")


def mixing_parameter(a, b):
    """Schmidt ratio ``u`` solving ``b / a = 2 u / (1 + u**2)`` with ``|u| < 1``."""
    _check(a, b)
    return float(b / (a + np.sqrt(a * a - b * b)))


def entropy(u):
    """Von Neumann entropy ``-log(1 - u**2) - u**2 log(u**2) / (1 - u**2)``."""
    u2 = float(u) ** 2
    if u2 >= 1:
        return np.inf
    if u2 == 0:
        return 0.0
    return float(-np.log1p(-u2) - u2 * np.log(u2) / (1 - u2))


def schmidt_spectrum(a, b, n_max=20):
    """Schmidt coefficients ``w_n = sqrt(1 - u**2) u**n`` for ``n = 0..n_max``."""
    u = mixing_parameter(a, b)
    n = np.arange(n_max + 1)
    w = np.sqrt(1 - u * u) * np.abs(u) ** n
    return SchmidtSpectrum(u=u, coefficients=w, entropy=entropy(u))


def _kernel_matrix(a, b, grid_size):
    kappa = np.sqrt(a * a - b * b)
    t, wt = np.polynomial.hermite.hermgauss(grid_size)
    x = t / np.sqrt(kappa)
    # log of sqrt(quadrature weight) including the exp(t**2) weight removal
    lg = 0.5 * (np.log(wt) + t * t - 0.5 * np.log(kappa))
    log_rho = -0.5 * np.log(np.pi) + 0.25 * np.log(a * a - b * b)
    expo = (log_rho - 0.5 * a * (x[:, None] ** 2 + x[None, :] ** 2) + b * np.outer(x, x)
            + lg[:, None] + lg[None, :])
    return x, np.exp(expo)


def quadrature_schmidt(a, b, grid_size=200):
    """Singular values of the discretized kernel, descending.

    The kernel is sampled on Gauss-Hermite nodes scaled to the oscillator
    length ``kappa**-1/2`` and symmetrically weighted, so the matrix SVD
    approximates the operator SVD. A ``ResolutionWarning`` is issued when
    the grid does not reach ``6 / sqrt(a - |b|)`` or when the top value
    changes against a grid of half the size.
    """
    _check(a, b)
    if grid_size < 4:
        raise ValueError("grid_size must be at least 4")
    x, k = _kernel_matrix(a, b, grid_size)
    s = np.linalg.svd(k, compute_uv=False)
    if x.max() < 6 / np.sqrt(a - abs(b)):
        warnings.warn(f"grid reaches {x.max():.3g}, below 6/sqrt(a-|b|)", ResolutionWarning)
    _, k_half = _kernel_matrix(a, b, grid_size // 2)
    s_half = np.linalg.svd(k_half, compute_uv=False)
    if abs(s_half[0] - s[0]) > 1e-10:
        warnings.warn(f"top singular value not converged: {s[0]!r} vs {s_half[0]!r} at half grid",
                      ResolutionWarning)
    return s


def gaussian_svd_overlap(a, b, p, p_prime):
    """Overlap ``<p, a-b | p', a-b> = sqrt(pi/(a-b)) exp(-(p - p')**2 / (4 (a-b)))``.

    The gaussian-SVD basis is not orthogonal; it becomes orthogonal only in
    the sharp limit ``a - b -> infinity``.
    """
    g = a - b
    if not g > 0:
        raise NonNormalizable(f"overlap requires a > b, got a={a}, b={b}")
    return float(np.sqrt(np.pi / g) * np.exp(-((p - p_prime) ** 2) / (4 * g)))


def mehler_partial_sum(x, y, u, terms=60):
    """``sum_{n<terms} u**n H_n(x) H_n(y) / (2**n n!)`` via normalized Hermite recursion."""
    hx0, hy0 = 1.0, 1.0
    hx1, hy1 = np.sqrt(2.0) * x, np.sqrt(2.0) * y
    total = hx0 * hy0 + (u * hx1 * hy1 if terms > 1 else 0.0)
    un = u
    for n in range(1, terms - 1):
        c1, c0 = np.sqrt(2.0 / (n + 1)), np.sqrt(n / (n + 1.0))
        hx0, hx1 = hx1, c1 * x * hx1 - c0 * hx0
        hy0, hy1 = hy1, c1 * y * hy1 - c0 * hy0
        un *= u
        total += un * hx1 * hy1
    return float(total)


def mehler_closed_form(x, y, u):
    return float(np.exp(2 * u / (1 + u) * x * y - u * u / (1 - u * u) * (x - y) ** 2) / np.sqrt(1 - u * u))


def mehler_residual(x=0.3, y=-0.7, u=0.5, terms=60):
    """Absolute difference between the truncated Mehler series and its closed form."""
    return abs(mehler_partial_sum(x, y, u, terms) - mehler_closed_form(x, y, u))
