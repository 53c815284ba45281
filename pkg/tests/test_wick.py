from itertools import permutations, product

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from continuum_trg import free_trg as ft
from continuum_trg import wick
from continuum_trg.errors import ParityError, PhaseBookkeepingError


def random_spd(rng, n):
    x = rng.standard_normal((n, n))
    return x @ x.T + 0.5 * np.eye(n)


def test_pair_moment_examples():
    assert wick.pair_moment(np.eye(3), 1, 1) == 1.0
    assert wick.pair_moment(np.linalg.inv(np.diag([2.0])), 0, 0) == 0.5
    state = ft.init_free(1.0)
    qinv = ft.build_loop(state, ft.split_weight(state, 4)).qinv
    assert wick.pair_moment(qinv, 1, 3) == wick.pair_moment(qinv, 3, 1)
    with pytest.raises(IndexError):
        wick.pair_moment(np.eye(2), 0, 2)


def test_quartic_moment_examples():
    assert wick.quartic_moment(np.eye(1), 0, 0, 0, 0) == 3.0
    assert wick.quartic_moment(np.eye(4), 0, 1, 2, 3) == 0.0
    with pytest.raises(IndexError):
        wick.quartic_moment(np.eye(2), 0, 1, 2, 0)


def test_quartic_moment_adaptive_quadrature_seed11():
    rng = np.random.default_rng(11)
    q = random_spd(rng, 4)
    exact = wick.quartic_moment(np.linalg.inv(q), 0, 1, 2, 3)
    assert abs(wick.quadrature_moment(q, (0, 1, 2, 3)) - exact) < 1e-8 * max(1.0, abs(exact))


def test_adaptive_quadrature_two_dimensional():
    rng = np.random.default_rng(3)
    q = random_spd(rng, 2)
    norm = np.sqrt(np.linalg.det(q)) / (2 * np.pi)
    lim = 10 / np.sqrt(np.linalg.eigvalsh(q).min())
    for idx in [(0, 0), (0, 1), (0, 0, 1, 1), (0, 1, 1, 1)]:
        f = lambda y, x: np.prod([(x, y)[k] for k in idx]) * np.exp(-0.5 * np.array([x, y]) @ q @ np.array([x, y]))
        val, _ = integrate.dblquad(f, -lim, lim, -lim, lim, epsabs=1e-12, epsrel=1e-12)
        exact = wick.moment(np.linalg.inv(q), idx)
        assert abs(norm * val - exact) < 1e-8 * max(1.0, abs(exact))


def test_moment_with_mean():
    cov = np.array([[2.0]])
    assert wick.moment(cov, (0, 0), mean=[3.0]) == pytest.approx(11.0)
    assert wick.moment(cov, (0, 0, 0, 0), mean=[1.0]) == pytest.approx(1 + 6 * 2 + 3 * 4)


@given(st.integers(0, 10 ** 6), st.integers(1, 4))
def test_quartic_moment_symmetry(seed, n):
    rng = np.random.default_rng(seed)
    qinv = np.linalg.inv(random_spd(rng, n))
    idx = tuple(rng.integers(0, n, 4))
    ref = wick.quartic_moment(qinv, *idx)
    for p in permutations(idx):
        assert wick.quartic_moment(qinv, *p) == pytest.approx(ref, rel=1e-14, abs=1e-15)


def test_vacuum_diagram():
    qinv = np.array([[0.7, 0.2], [0.2, 0.4]])
    p = wick.Polynomial4.zeros(2)
    p.c4[1, 1, 1, 1] = 2.5
    out = wick.integrate_polynomial(p, qinv, np.zeros((2, 0)), 2)
    assert out.c0 == pytest.approx(3 * 2.5 * 0.4 ** 2)
    assert out.dim == 0


def _random_poly(rng, n, phase):
    c2 = rng.standard_normal((n, n))
    c4 = rng.standard_normal((n,) * 4)
    return wick.Polynomial4(rng.standard_normal(), wick.symmetrize2(c2), wick.symmetrize4(c4), phase)


def test_integrate_polynomial_against_quadrature():
    # 2 inner / 2 outer toy kernel: average over the shifted inner gaussian by Gauss-Hermite
    rng = np.random.default_rng(5)
    q = random_spd(rng, 2)
    qinv = np.linalg.inv(q)
    shift = rng.standard_normal((2, 2))
    p = _random_poly(rng, 4, np.zeros(4, int))
    # inner-outer mixed monomials of odd inner degree would leave imaginary parts; keep even ones
    for idx in product(range(4), repeat=4):
        if sum(i < 2 for i in idx) % 2:
            p.c4[idx] = 0.0
    for idx in product(range(4), repeat=2):
        if sum(i < 2 for i in idx) % 2:
            p.c2[idx] = 0.0
    out = wick.integrate_polynomial(p, qinv, shift, 2)
    lchol = np.linalg.cholesky(qinv)
    nodes, weights = np.polynomial.hermite_e.hermegauss(10)
    weights = weights / np.sqrt(2 * np.pi)
    for y in rng.standard_normal((3, 2)):
        total = 0.0
        for (a, wa), (b, wb) in product(zip(nodes, weights), repeat=2):
            x = lchol @ np.array([a, b]) + 1j * shift @ y
            total += wa * wb * p.evaluate(np.concatenate([x, y]))
        assert abs(total - out.evaluate(y)) < 1e-9 * max(1.0, abs(total))


def test_all_legs_converted_sign():
    shift = np.array([[2.0]])
    p = wick.Polynomial4.zeros(2)
    p.c4[0, 0, 0, 0] = 1.0
    out = wick.integrate_polynomial(p, np.array([[1e-300]]), shift, 1)
    # (i * 2 y)**4 = +16 y**4
    assert out.c4[0, 0, 0, 0] == pytest.approx(16.0)


def test_parity_and_phase_errors():
    p = wick.Polynomial4.zeros(2, phase=[1, 0])
    with pytest.raises(ParityError):
        wick.integrate_polynomial(p, np.eye(1), np.ones((1, 1)), 1)
    q = wick.Polynomial4.zeros(2)
    q.c2[0, 1] = q.c2[1, 0] = 1.0
    with pytest.raises(PhaseBookkeepingError):
        wick.integrate_polynomial(q, np.eye(1), np.ones((1, 1)), 1)
    # the same cross term is consistent when the outer leg carries one power of i
    q.phase = np.array([0, 1])
    out = wick.integrate_polynomial(q, np.eye(1), np.ones((1, 1)), 1)
    assert out.c2[0, 0] == pytest.approx(2.0)


def test_add_requires_matching_phases():
    a = wick.Polynomial4.zeros(2, phase=[0, 1])
    b = wick.Polynomial4.zeros(2, phase=[0, 0])
    with pytest.raises(PhaseBookkeepingError):
        a + b


@given(st.integers(0, 10 ** 6))
def test_transform_real_matches_complex_substitution(seed):
    rng = np.random.default_rng(seed)
    p = _random_poly(rng, 3, np.zeros(3, int))
    lin = rng.standard_normal((3, 2))
    cov = np.linalg.inv(random_spd(rng, 3))
    real = wick.transform_real((p.c0, p.c2, p.c4), lin, cov)
    cplx = wick.substitute(p.c0, p.c2, p.c4, 1j * lin, cov)
    for r, c in zip(real, cplx):
        assert np.allclose(r, np.real(c), atol=1e-12) and np.allclose(np.imag(c), 0, atol=1e-12)


@given(st.integers(0, 10 ** 6))
def test_canonical_form_preserves_values(seed):
    rng = np.random.default_rng(seed)
    n = 3
    p = wick.Polynomial4(0.3, rng.standard_normal((n, n)), rng.standard_normal((n,) * 4), [0, 1, 0])
    z = rng.standard_normal(n)
    c = p.canonical()
    assert np.allclose(c.c4, np.transpose(c.c4, (2, 0, 3, 1)))
    assert abs(c.evaluate(z) - p.evaluate(z)) < 1e-10 * max(1.0, abs(p.evaluate(z)))
