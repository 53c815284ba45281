from types import SimpleNamespace

import numpy as np
import pytest

from continuum_trg import diagnostics as dg
from continuum_trg.errors import InvalidConfig, InvalidSpace
from continuum_trg.pert_trg import FieldIndexSpace, PertTensors
from continuum_trg.trace import LevelRecord, RGTrace

from flows import free_flow


def _tensors(space, t2=None, t4=None):
    n = space.dim
    return PertTensors(0.0, np.zeros((n, n)) if t2 is None else t2,
                       np.zeros((n,) * 4) if t4 is None else t4, space)


def _record(level, values, **kw):
    return LevelRecord(level=level, chi_pre=len(values), chi_post=len(values),
                       singular_values=np.asarray(values, float), cdl_distance=0.0, log_const=0.0, **kw)


def test_omega_of_zero_tensors():
    space = FieldIndexSpace.cubic(2, 3, 1)
    w2, w4 = dg.omega_vectors(_tensors(space), 4)
    np.testing.assert_array_equal(w2, np.zeros(3))
    np.testing.assert_array_equal(w4, np.zeros(3))


def test_omega2_of_identity():
    space = FieldIndexSpace.cubic(2, 3, 1)
    w2, w4 = dg.omega_vectors(_tensors(space, t2=np.eye(space.dim)), 8)
    np.testing.assert_allclose(w2, np.full(3, 1 / 8))
    np.testing.assert_array_equal(w4, np.zeros(3))


def test_omega4_normalization():
    space = FieldIndexSpace.cubic(1, 2, 1)
    t4 = np.zeros((space.dim,) * 4)
    i = space.indices(dg.SPLIT)[0]
    t4[i, 0, 0, 0] = -3.0
    _, w4 = dg.omega_vectors(_tensors(space, t4=t4), 2)
    np.testing.assert_allclose(w4, [3.0 / 8, 0.0])


def test_omega_rejects_vertex_space():
    with pytest.raises(InvalidSpace):
        dg.omega_vectors(_tensors(FieldIndexSpace.vertex(2, 1)), 4)
    with pytest.raises(InvalidSpace):
        dg.omega_matrix(_tensors(FieldIndexSpace.vertex(2, 1)), 4)


def test_omega_rejects_mismatched_tags():
    a = _tensors(FieldIndexSpace.cubic(2, 3, 1))
    b = _tensors(FieldIndexSpace.cubic(2, 2, 1))
    with pytest.raises(InvalidSpace):
        dg.omega_vectors([a, b], 4)


def test_omega_matrix_zero_and_entry():
    space = FieldIndexSpace(((dg.SPLIT, 0),) * 3)
    np.testing.assert_array_equal(dg.omega_matrix(_tensors(space), 4), np.zeros((3, 3)))
    t2 = np.zeros((3, 3))
    t2[0, 1] = t2[1, 0] = -2.0
    om = dg.omega_matrix(_tensors(space, t2=t2), 4)
    assert om[0, 1] == 2.0 and om[1, 0] == 2.0
    assert om[0, 0] == 0.0


def test_omega_matrix_orders_splitting_block_first():
    space = FieldIndexSpace.cubic(1, 2, 1)
    t2 = np.zeros((space.dim, space.dim))
    s = space.indices(dg.SPLIT)
    t2[s[0], s[0]] = 5.0
    om = dg.omega_matrix(_tensors(space, t2=t2), 1)
    assert om[0, 0] == 5.0
    assert om.sum() == 5.0


def test_two_tags_share_even_block():
    space = FieldIndexSpace.cubic(1, 1, 1)
    t2 = np.zeros((space.dim, space.dim))
    s = space.indices(dg.SPLIT)[0]
    t2[s, 0] = t2[0, s] = 1.0
    a, b = _tensors(space, t2=t2), _tensors(space, t2=-t2)
    w2, _ = dg.omega_vectors([a, b], 1)
    # the shared entries cancel between the tags
    np.testing.assert_array_equal(w2, [0.0])


def test_ir_scale_examples():
    assert dg.ir_scale(0.01) == pytest.approx(13.287712379549449, abs=1e-12)
    assert dg.ir_scale(0.5) == pytest.approx(2.0)
    assert dg.ir_scale(1.0) == 0.0
    for bad in (0.0, -1.0, np.nan):
        with pytest.raises(InvalidConfig):
            dg.ir_scale(bad)


def test_cdl_distance_of_exact_cdl_weight():
    b = np.diag([3.0, 1.0, 0.0, 0.0])
    assert dg.cdl_distance(SimpleNamespace(b=b)) == 0.0
    assert dg.cdl_distance(SimpleNamespace(b=np.zeros((4, 4)))) == 0.0
    assert dg.cdl_distance(SimpleNamespace(b=np.eye(4))) == pytest.approx(np.sqrt(0.5))


def test_cdl_distance_along_massive_flow():
    _, trace = free_flow(0.01, 16, 13)
    assert trace[0].cdl_distance > 0.1
    d16, d22 = trace[16].cdl_distance, trace[22].cdl_distance
    assert d22 < 1e-2 * d16
    assert all(0.0 <= r.cdl_distance <= 1.0 for r in trace)


def test_cdl_onset_requires_persistence():
    tr = RGTrace()
    for n, v in enumerate([[1, 1], [1, 1e-6], [1, 0.5], [1, 1e-5], [1, 1e-7]]):
        tr.append(_record(n, v))
    assert dg.cdl_onset(tr) == 3
    assert dg.median_ratio_onset(tr) == 1
    tr.append(_record(5, [1, 0.1]))
    assert dg.cdl_onset(tr) is None


def test_cdl_onset_massive_flow():
    _, trace = free_flow(0.01, 16, 13)
    assert dg.cdl_onset(trace) == 19


def test_lower_half_ratio():
    assert dg.lower_half_ratio([4.0, 2.0, 1.0, 0.5]) == 0.25
    assert dg.lower_half_ratio([0.0, 0.0]) == 1.0
    assert dg.lower_half_ratio([1.0]) == 1.0


def test_freeze_level():
    tr = RGTrace()
    vals = [1.0, 2.0, 1.5, 2.5, 1.6, 2.6, 1.6, 2.6, 1.6]
    for n, v in enumerate(vals):
        tr.append(_record(n, [1.0], omega4=np.array([v, 1.0])))
    assert dg.freeze_level(tr) == 4
    tr.append(_record(9, [1.0], omega4=np.array([9.0, 1.0])))
    assert dg.freeze_level(tr) is None


def test_freeze_level_ignores_missing_vectors():
    tr = RGTrace()
    tr.append(_record(0, [1.0]))
    assert dg.freeze_level(tr) is None


DEEP_RUN = dict(mass=0.01, chi_max=16, sites_exponent=20, diagnostics=True, matrix_levels=(8, 24))


def test_omega_matrix_cdl_block_pattern():
    from flows import pert_flow
    _, trace = pert_flow(**DEEP_RUN)
    c = trace[24].chi_post
    chi = trace[24].chi_pre // 2
    split, even = slice(0, c), slice(c, c + 2 * chi)
    h = c // 2
    deep, early = trace[24].omega_matrix, trace[8].omega_matrix
    # deep in the CDL regime the splitting derivatives no longer talk to the even fields
    assert deep[split, even].max() < 1e-10 * deep[split, split].max()
    assert early[split, even].max() > 0.1 * early[split, split].max()
    # and the two halves of the splitting block are mirror copies
    np.testing.assert_allclose(deep[:h, :h], deep[h:c, h:c], atol=1e-10 * deep[split, split].max())
    np.testing.assert_allclose(deep[:h, c:], deep[h:c, c:], atol=1e-10 * deep[:c, c:].max())
