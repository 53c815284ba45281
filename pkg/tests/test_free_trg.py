import numpy as np
import pytest
from hypothesis import given, strategies as st

from continuum_trg import free_trg as ft
from continuum_trg import oracles
from continuum_trg.config import RunConfig
from continuum_trg.errors import DegenerateWeight, InternalInvariantViolation, InvalidConfig, NonNormalizableTrace


def levels_untruncated(mass, n):
    state = ft.init_free(mass)
    out = []
    for _ in range(n):
        split = ft.split_weight(state, 10 ** 6)
        kernel = ft.build_loop(state, split)
        new = ft.coarse_grain_free(state, split, kernel)
        out.append((state, split, kernel, new))
        state = new
    return out


@pytest.mark.parametrize("mass, diag", [(1.0, 1.5), (0.0, 1.0), (0.1, 1.005)])
def test_init_free_a_matrix(mass, diag):
    state = ft.init_free(mass)
    assert np.allclose(state.a, [[diag, -1.0], [-1.0, diag]], rtol=0, atol=1e-15)
    assert np.array_equal(state.b, np.eye(2))
    assert state.log_norm == 0.0 and state.d_prev is None


def test_init_free_rejects_negative_mass():
    with pytest.raises(InvalidConfig):
        ft.init_free(-0.1)


def test_level0_split_is_identity():
    split = ft.split_weight(ft.init_free(0.7), 16)
    assert np.array_equal(split.d, [1.0, 1.0])
    assert split.kept_count == 2
    assert np.allclose(np.abs(split.u), 1) and np.allclose(np.abs(split.v), 1)


def test_odd_level_half_spectrum_vanishes():
    for state, split, _, _ in levels_untruncated(1.0, 5):
        if state.level % 2 == 1:
            assert split.discarded_zero_count == state.chi
            top = split.spectrum[0]
            assert np.sum(np.abs(split.spectrum) < 1e-10 * top) == state.chi


def test_truncation_contract():
    state = levels_untruncated(1.0, 4)[-1][3]
    assert 2 * state.chi == 8
    split = ft.split_weight(state, 4)
    assert split.kept_count == 4
    assert split.truncated_count == 4 - split.discarded_zero_count


def test_split_isometries_orthonormal():
    for state, split, _, _ in levels_untruncated(0.3, 6):
        assert np.allclose(split.u.T @ split.u, np.eye(split.u_count), atol=1e-10)
        assert np.allclose(split.v.T @ split.v, np.eye(split.v.shape[1]), atol=1e-10)
        assert np.all(np.diff(split.d[:split.u_count]) <= 0)


def test_degenerate_weight():
    state = ft.init_free(1.0)
    state.b = np.zeros((2, 2))
    with pytest.raises(DegenerateWeight):
        ft.split_weight(state, 4)


def test_loop_kernel_structure_level0():
    state = ft.init_free(1.0)
    split = ft.split_weight(state, 16)
    kernel = ft.build_loop(state, split)
    ft.check_loop_structure(kernel, state)
    assert np.array_equal(kernel.q, kernel.q.T)
    assert np.linalg.eigvalsh(kernel.q).min() > 0
    assert not kernel.c_left[3].any()
    assert not kernel.c_right[1].any()


def test_loop_dimension_mismatch():
    state = ft.init_free(1.0)
    split = ft.split_weight(levels_untruncated(1.0, 1)[0][3], 16)
    with pytest.raises(InternalInvariantViolation):
        ft.build_loop(state, split)


def test_level1_vertex_from_loop():
    state, split, kernel, new = levels_untruncated(1.0, 1)[0]
    c = np.hstack([kernel.c_left, kernel.c_right])
    m1 = 0.5 * np.eye(8) + c.T @ kernel.qinv @ c
    assert np.abs(m1 - new.m_matrix()).max() < 1e-14


def test_two_levels_bond_dimension():
    assert levels_untruncated(1.0, 2)[-1][3].chi == 2


def test_b_symmetric_and_block_structure():
    for _, _, _, new in levels_untruncated(0.5, 6):
        assert np.linalg.norm(new.b - new.b.T) < 1e-12
        assert np.linalg.eigvalsh(new.b).min() > -1e-12 * np.linalg.norm(new.b)


def test_bond_dimension_doubling():
    for state, _, _, _ in levels_untruncated(1.0, 7):
        n = state.level
        expected = 2 ** (n // 2) if n % 2 == 0 else 2 ** ((n + 1) // 2)
        assert state.chi == expected


def test_deep_ir_half_spectrum_decays():
    _, trace = ft.run_free_flow(RunConfig(mass=10.0, chi_max=16, sites_exponent=4))
    lower = [np.sort(np.abs(r.singular_values))[::-1][len(r.singular_values) // 2] for r in trace]
    even = lower[2::2]
    assert all(b <= a * 1.0001 for a, b in zip(even, even[1:]))
    assert even[-1] < 1e-7


def test_close_trace_single_vertex_quadrature():
    assert abs(ft.close_trace(ft.init_free(10.0)) - oracles.single_vertex_logZ_quadrature(10.0)) < 1e-10


def test_close_trace_decoupled():
    state = ft.FreeWeightState(level=1, chi=1, dinv=np.array([2.0]), a_block=np.zeros((1, 1)),
                               b=np.zeros((2, 2)), u_count=1)
    # B = 0, A = diag(1): each of the two trace fields sees 2 * 1 on the folded form
    expected = 2 * (0.5 * np.log(2 * np.pi) - 0.5 * np.log(2.0))
    assert abs(ft.close_trace(state) - expected) < 1e-14


def test_close_trace_non_normalizable():
    state = ft.FreeWeightState(level=1, chi=1, dinv=np.array([-2.0]), a_block=np.zeros((1, 1)),
                               b=np.zeros((2, 2)), u_count=1)
    with pytest.raises(NonNormalizableTrace):
        ft.close_trace(state)


@pytest.mark.parametrize("mass", [0.3, 1.0, 2.0])
def test_four_site_torus_matches_brute_force(mass):
    report, _ = ft.run_free_flow(RunConfig(mass=mass, chi_max=64, sites_exponent=1))
    brute = -oracles.brute_force_logZ(2, mass) / 4
    assert abs(report.f0 - brute) <= 1e-10 * abs(brute)


def test_m1_chi16_precision():
    report, _ = ft.run_free_flow(RunConfig(mass=1.0, chi_max=16, oracle=True))
    assert report.delta_f0 <= 1e-6


def test_delta_f0_monotone_in_chi():
    for mass in (1.0, 2.0):
        deltas = [ft.run_free_flow(RunConfig(mass=mass, chi_max=c, oracle=True))[0].delta_f0
                  for c in (4, 8, 16, 32)]
        assert all(b < a for a, b in zip(deltas[1:], deltas[2:])), deltas


def test_accumulator_normalization_invariance():
    acc = ft.FreeEnergyAccumulator(log2_sites=6)
    for n in range(1, 7):
        acc.push(n, 0.1 * n)
    base = acc.log_z_per_site(0.5, 6)
    # extract an extra constant c per vertex at level 3 and divide it back out of the final weight
    c = 1.7
    acc.push(3, c)
    assert abs(acc.log_z_per_site(0.5 - c * 2 ** 3, 6) - base) < 1e-12
    assert [v for _, _, v in acc.per_level_log[:6]] == [32, 16, 8, 4, 2, 1]


@given(st.floats(0.2, 5.0))
def test_flow_records_consistent(mass):
    _, trace = ft.run_free_flow(RunConfig(mass=mass, chi_max=8, sites_exponent=3))
    for rec in trace:
        assert np.all(np.diff(rec.singular_values) <= 1e-15)
        assert rec.chi_post <= 8
        assert 0.0 <= rec.cdl_distance <= 1.0
