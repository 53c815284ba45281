"""Independent reference values for the link-field boson.

The lattice model: every vertex of a square lattice carries the weight

    exp(-1/2 sum_i (x_i - x_{i+1})**2 - m**2/4 sum_i x_i**2 - lambda/2 sum_i x_i**4)

over its four legs (taken cyclically). Each link field belongs to two
vertices, so per link the mass term is ``m**2 x**2 / 2`` and the interaction
``lambda x**4``.
"""
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import InvalidConfig, SingularMatrix
from . import symlin

LOG2PI = np.log(2 * np.pi)
QUAD_TOL = 1e-13


def _check_mass(mass):
    if not np.isfinite(mass) or mass <= 0:
        raise InvalidConfig(f"mass must be positive, got {mass}")


def link_quadratic_form(size, mass, kinetic=True):
    """Quadratic form of all link fields of a ``size x size`` torus.

    Link ``('h', x, y)`` joins vertex ``(x, y)`` to ``(x+1, y)`` and
    ``('v', x, y)`` joins ``(x, y)`` to ``(x, y+1)``. Vertex legs in cyclic
    order are north, east, south, west.
    """
    idx = {}
    for x in range(size):
        for y in range(size):
            idx[("h", x, y)] = len(idx)
            idx[("v", x, y)] = len(idx)
    n = len(idx)
    k = np.zeros((n, n))
    for x in range(size):
        for y in range(size):
            legs = [idx[("v", x, y)], idx[("h", x, y)], idx[("v", x, (y - 1) % size)],
                    idx[("h", (x - 1) % size, y)]]
            for i in range(4):
                a, b = legs[i], legs[(i + 1) % 4]
                if kinetic:
                    k[a, a] += 1
                    k[b, b] += 1
                    k[a, b] -= 1
                    k[b, a] -= 1
                k[a, a] += mass * mass / 2
    return k


def brute_force_logZ(size, mass, kinetic=True):
    """``log Z`` of the gaussian model on a ``size x size`` torus (at most 32 links)."""
    k = link_quadratic_form(size, mass, kinetic)
    n = k.shape[0]
    if n > 32:
        raise InvalidConfig(f"brute force limited to 32 links, got {n}")
    try:
        ld = symlin.logdet_sym(k)
    except SingularMatrix as exc:
        raise SingularMatrix(exc.index, exc.value, "link quadratic form is not positive definite") from exc
    return n / 2 * LOG2PI - 0.5 * ld


def brute_force_df(size, mass, kinetic=True):
    """``d(-log Z)/d lambda`` at ``lambda = 0``: ``sum_l <x_l**4> = 3 sum_l G_ll**2``."""
    k = link_quadratic_form(size, mass, kinetic)
    if k.shape[0] > 32:
        raise InvalidConfig(f"brute force limited to 32 links, got {k.shape[0]}")
    g = symlin.inv_sym(k)
    return float(3 * np.sum(np.diag(g) ** 2))


def momentum_kernel(kx, ky, mass):
    """2x2 kernel of the (h, v) link sublattices at momentum ``(kx, ky)``."""
    hv = -(1 + np.exp(1j * kx)) * (1 + np.exp(-1j * ky))
    diag = 4 + mass * mass
    return np.array([[diag, hv], [np.conj(hv), diag]])


def _logdet_kernel(kx, ky, mass):
    # closed form of log det momentum_kernel, used inside the quadrature
    c = np.cos(kx / 2) * np.cos(ky / 2)
    d = 4 + mass * mass
    return np.log(d * d - 16 * c * c)


def _propagator(kx, ky, mass):
    c = np.cos(kx / 2) * np.cos(ky / 2)
    d = 4 + mass * mass
    return d / (d * d - 16 * c * c)


def _bz_average(fn, mass):
    # integrand is even in kx and ky: integrate the positive quadrant
    val, _ = integrate.dblquad(lambda ky, kx: fn(kx, ky, mass), 0, np.pi, 0, np.pi,
                               epsabs=QUAD_TOL, epsrel=QUAD_TOL)
    return val / np.pi ** 2


@lru_cache(maxsize=None)
def exact_f0(mass):
    """Infinite-lattice free energy per vertex, ``f = -log Z / N``."""
    _check_mass(mass)
    return -LOG2PI + 0.5 * _bz_average(_logdet_kernel, mass)


@lru_cache(maxsize=None)
def coincident_propagator(mass):
    """``G(0)``: variance of a single link field on the infinite lattice."""
    _check_mass(mass)
    return _bz_average(_propagator, mass)


@lru_cache(maxsize=None)
def exact_f1(mass):
    """First-order coefficient ``f1 = 2 links per vertex * 3 G(0)**2``."""
    return 6.0 * coincident_propagator(mass) ** 2


def _torus_grid(size):
    ks = 2 * np.pi * np.arange(size) / size
    return np.meshgrid(ks, ks, indexing="ij")


def exact_f0_torus(size, mass):
    """Free energy per vertex on a ``size x size`` torus from the momentum sum."""
    _check_mass(mass)
    kx, ky = _torus_grid(size)
    return float(-LOG2PI + 0.5 * np.mean(_logdet_kernel(kx, ky, mass)))


def exact_f1_torus(size, mass):
    """First-order coefficient per vertex on a ``size x size`` torus from the momentum sum."""
    _check_mass(mass)
    kx, ky = _torus_grid(size)
    return float(6.0 * np.mean(_propagator(kx, ky, mass)) ** 2)


def single_vertex_logZ_quadrature(mass, lam=0.0):
    """``log Z`` of the one-vertex torus by direct 2D quadrature, including ``lambda x**4``.

    The two link fields ``h`` and ``v`` each appear twice around the vertex.
    """
    k = link_quadratic_form(1, mass)
    lim = 12.0 / np.sqrt(min(np.linalg.eigvalsh(k)))

    def integrand(v, h):
        x = np.array([h, v])
        return np.exp(-0.5 * x @ k @ x - lam * (h ** 4 + v ** 4))

    val, _ = integrate.dblquad(integrand, -lim, lim, -lim, lim, epsabs=1e-14, epsrel=1e-13)
    return float(np.log(val))
