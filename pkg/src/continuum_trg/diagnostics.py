"""Observables of the RG flow: omega vectors, Omega matrix, CDL distance and onset."""
import numpy as np

from .errors import InvalidConfig, InvalidSpace
from .trace import FreeEnergyReport, LevelRecord, RGTrace  # noqa: F401  (re-export)

CDL_THRESHOLD = 1e-4

# index roles of the perturbative field spaces
EVEN = "even_lattice"
SPLIT = "deriv_even_split"
DERIV_U = "deriv_u"


def _tensor_list(t):
    if isinstance(t, (list, tuple)):
        return list(t)
    return [t]


def _shared_mask(space):
    return space.mask(EVEN) | space.mask(SPLIT)


def _check_split_block(tensors):
    for t in tensors:
        if not t.space.mask(SPLIT).any():
            raise InvalidSpace("index space has no derivative-even-splitting block")
    first = tensors[0].space
    for t in tensors[1:]:
        if not np.array_equal(_shared_mask(t.space), _shared_mask(first)) or \
                not np.array_equal(t.space.mask(SPLIT), first.mask(SPLIT)):
            raise InvalidSpace("tensors do not share the same even and splitting blocks")


def _combined_abs(arrays, shared, keep):
    """Sum of ``|sum_t A_t|`` over trailing axes, on the union of the tag spaces.

    Every ``A_t`` lives on its own space whose ``shared`` indices are common
    to all tags while the remaining indices belong to tag ``t`` only. Entries
    touching a tag-specific index receive a contribution from that tag alone.
    Returns the reduced array over the combined index set ordered as
    (shared, specific of tag 0, specific of tag 1, ...).
    """
    rank = arrays[0].ndim
    red = tuple(range(keep, rank))
    sh = np.flatnonzero(shared)
    own = np.flatnonzero(~shared)
    ns, nx = len(sh), len(own)
    ntag = len(arrays)
    dim = ns + ntag * nx
    out = np.zeros((dim,) * keep)
    tot = sum(a[np.ix_(*([sh] * rank))] for a in arrays)
    shared_part = np.abs(tot).sum(axis=red) if red else np.abs(tot)
    idx_sh = np.ix_(*([np.arange(ns)] * keep))
    out[idx_sh] += shared_part
    for t, a in enumerate(arrays):
        order = np.concatenate([sh, own])
        full = np.abs(a[np.ix_(*([order] * rank))])
        full_red = full.sum(axis=red) if red else full
        only_sh = np.abs(a[np.ix_(*([sh] * rank))])
        only_sh_red = only_sh.sum(axis=red) if red else only_sh
        pos = np.concatenate([np.arange(ns), ns + t * nx + np.arange(nx)])
        contrib = full_red.copy()
        contrib[np.ix_(*([np.arange(ns)] * keep))] -= only_sh_red
        out[np.ix_(*([pos] * keep))] += contrib
    return out


def _display_order(space, ntag):
    """Permutation of the combined index set into (splitting, even, deriv_u)."""
    shared = _shared_mask(space)
    sh = np.flatnonzero(shared)
    split_pos = [k for k, i in enumerate(sh) if space.mask(SPLIT)[i]]
    even_pos = [k for k, i in enumerate(sh) if space.mask(EVEN)[i]]
    rest = list(range(len(sh), len(sh) + ntag * int((~shared).sum())))
    return np.array(split_pos + even_pos + rest, dtype=int), len(split_pos)


def omega_vectors(t, chi_max):
    """``omega2_i = sum_j |T2_ij| / chi_max`` and ``omega4_i = sum_jkl |T4_ijkl| / chi_max**3``.

    ``t`` is a ``PertTensors`` or a list of them describing the tags of one
    cubic weight; ``i`` runs over the splitting-field derivative block.
    """
    tensors = _tensor_list(t)
    _check_split_block(tensors)
    space = tensors[0].space
    shared = _shared_mask(space)
    split_rows = space.mask(SPLIT)[shared]
    w2 = _combined_abs([np.asarray(x.t2) for x in tensors], shared, 1)
    w4 = _combined_abs([np.asarray(x.t4) for x in tensors], shared, 1)
    rows = np.flatnonzero(split_rows)
    return w2[rows] / chi_max, w4[rows] / chi_max ** 3


def omega_from_rows(rows2, rows4, shared, chi_max):
    """Omega vectors from pre-computed splitting rows of each tag.

    ``rows2[t]`` has shape ``(r, n)`` and ``rows4[t]`` shape ``(r, n, n, n)``;
    the rows are splitting-field indices shared by all tags.
    """
    r = rows2[0].shape[0]
    sh = np.flatnonzero(shared)
    w2 = np.abs(sum(a[:, sh] for a in rows2)).sum(axis=1)
    w4 = np.abs(sum(a[np.ix_(np.arange(r), sh, sh, sh)] for a in rows4)).sum(axis=(1, 2, 3))
    for a2, a4 in zip(rows2, rows4):
        w2 += np.abs(a2).sum(axis=1) - np.abs(a2[:, sh]).sum(axis=1)
        w4 += np.abs(a4).sum(axis=(1, 2, 3)) - np.abs(a4[np.ix_(np.arange(r), sh, sh, sh)]).sum(axis=(1, 2, 3))
    return w2 / chi_max, w4 / chi_max ** 3


def omega_matrix(t, chi_max):
    """``Omega_ij = |T2_ij| + sum_kl |T4_ijkl| / chi_max**2``.

    Indices are ordered as (splitting derivatives, even fields, u derivatives
    of each tag).
    """
    tensors = _tensor_list(t)
    _check_split_block(tensors)
    space = tensors[0].space
    shared = _shared_mask(space)
    o2 = _combined_abs([np.asarray(x.t2) for x in tensors], shared, 2)
    o4 = _combined_abs([np.asarray(x.t4) for x in tensors], shared, 2)
    om = o2 + o4 / chi_max ** 2
    perm, _ = _display_order(space, len(tensors))
    return om[np.ix_(perm, perm)]


def cdl_distance(state):
    """Fraction of the left-right coupling carried outside the CDL pattern.

    In a corner-double-line weight only half of the splitting directions
    couple the two halves of a vertex, so the lower half of the spectrum of
    ``B_n`` vanishes. The distance is the norm of that lower half relative to
    the whole spectrum: 0 for an exact CDL weight, at most 1.
    """
    w = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (state.b + state.b.T))))[::-1]
    total = np.linalg.norm(w)
    if total == 0:
        return 0.0
    return float(np.linalg.norm(w[len(w) // 2:]) / total)


def lower_half_ratio(values):
    """Largest singular value of the lower half relative to the top one."""
    v = np.sort(np.abs(np.asarray(values)))[::-1]
    if len(v) < 2 or v[0] == 0:
        return 1.0
    return float(v[len(v) // 2] / v[0])


def cdl_onset(trace, threshold=CDL_THRESHOLD):
    """First level after which the lower half of the ``B_n`` spectrum stays below ``threshold``.

    Returns ``None`` when the condition does not hold at the last level.
    Structural zeros at odd levels before truncation are covered by the
    requirement that the condition persists to the end of the flow.
    """
    recs = list(trace)
    onset = None
    for rec in reversed(recs):
        if lower_half_ratio(rec.singular_values) < threshold:
            onset = rec.level
        else:
            break
    return onset


def median_ratio_onset(trace, threshold=CDL_THRESHOLD):
    """First level where median(lower half) / median(upper half) < ``threshold``."""
    for rec in trace:
        v = np.sort(np.abs(rec.singular_values))[::-1]
        k = len(v) // 2
        if k == 0:
            continue
        if np.median(v[k:]) < threshold * np.median(v[:k]):
            return rec.level
    return None


def freeze_level(trace, tol=1e-3, key="omega4"):
    """First level whose omega vector already equals its frozen value.

    The flow alternates between two lattice orientations, so level ``n`` is
    compared with level ``n + 2``. Returns the smallest ``n`` such that the
    relative change from ``k`` to ``k + 2`` stays below ``tol`` for every
    ``k >= n``, or ``None`` if the last comparison fails.
    """
    recs = [r for r in trace if getattr(r, key) is not None]
    by_level = {r.level: np.asarray(getattr(r, key)) for r in recs}
    levels = [n for n in sorted(by_level) if n + 2 in by_level]
    frozen = None
    for n in reversed(levels):
        cur, nxt = by_level[n], by_level[n + 2]
        if cur.shape != nxt.shape:
            break
        if np.linalg.norm(nxt - cur) <= tol * max(np.linalg.norm(nxt), 1e-300):
            frozen = n
        else:
            break
    return frozen


def ir_scale(mass):
    """Level at which the lattice spacing reaches the correlation length ``1/m``."""
    if not mass > 0:
        raise InvalidConfig(f"mass must be positive, got {mass}")
    return 2.0 * np.log2(1.0 / mass)
