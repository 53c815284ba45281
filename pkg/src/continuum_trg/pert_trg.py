"""First-order perturbative TRG for the quartic interaction.

The level-n weight is ``W_free * (1 + lambda * P)`` where ``P`` is a quartic
polynomial. ``P`` is stored as four *tags*, one per vertex leg position
(0, 1 on the left half, 2, 3 on the right half). Each tag collects the
diagrams whose interaction vertex sits at that position.

Variables of a vertex tag: the four leg fields ``p`` (``4 chi``) and the
pending derivative ``zeta`` (``chi``) created by the previous split. Variables
of a cubic tag: the two leg fields ``y`` (``2 chi``), the pending derivative
of its vertex tag and the derivative ``zeta''`` with respect to the new
splitting field (``c``).

Splitting assigns every tag wholly to the cubic weight of its own side; the
fields of the other side are rewritten through ``p_R = y - U zeta''`` (left)
or ``p_L = y + U zeta''`` (right). Sewing four cubic weights integrates the
inner links together with the pending derivatives, so a derivative leg lives
for exactly one iteration.

Coefficients are kept real by storing ``R`` with ``T = i**(#derivative legs) R``
(see ``wick.Polynomial4``). Derivative legs carry phase 1 in the real frame,
except ``zeta''`` whose ``i`` is absorbed by its definition.
"""
from dataclasses import dataclass
from typing import Optional
import time

import numpy as np

from . import free_trg as ft
from .diagnostics import DERIV_U, EVEN, SPLIT, cdl_onset, omega_from_rows, omega_matrix
from .errors import InvalidConfig, OddLifetimeViolation, PhaseBookkeepingError, Unsupported
from .trace import FreeEnergyReport, RGTrace
from .wick import Polynomial4, contract_rows, transform_real

DELTA_ODD = "delta_odd"
ROLES = (EVEN, SPLIT, DERIV_U, DELTA_ODD)
PHASE_OF_ROLE = {EVEN: 0, SPLIT: 0, DERIV_U: 1, DELTA_ODD: 1}

# plaquette placements: (side, inner link of cubic leg a, inner link of cubic leg b,
# orientation sign of the new splitting field, new leg position)
PLACEMENTS = ((0, 0, 1, +1, 0), (0, 2, 1, -1, 1), (1, 0, 3, +1, 2), (1, 2, 3, -1, 3))
# trace closure: tag -> (trace field, use gauge sign flip)
CLOSURE_LINK = {0: (0, False), 1: (1, False), 2: (1, True), 3: (0, True)}


@dataclass(frozen=True)
class FieldIndexSpace:
    """Ordered labels ``(role, level)`` of the variables of a tensor."""

    labels: tuple

    @property
    def dim(self):
        return len(self.labels)

    def mask(self, role):
        if role not in ROLES:
            raise ValueError(f"unknown role {role}")
        return np.array([r == role for r, _ in self.labels], dtype=bool)

    def indices(self, role):
        return np.flatnonzero(self.mask(role))

    @property
    def phases(self):
        return np.array([PHASE_OF_ROLE[r] for r, _ in self.labels], dtype=int)

    @classmethod
    def vertex(cls, chi, level):
        return cls(tuple([(EVEN, level)] * (4 * chi) + [(DERIV_U, level - 1)] * chi))

    @classmethod
    def cubic(cls, chi, c, level):
        return cls(tuple([(EVEN, level)] * (2 * chi) + [(DERIV_U, level - 1)] * chi
                         + [(SPLIT, level)] * c))


@dataclass
class PertTensors:
    """Order-lambda content ``t0 + t2 zz + t4 zzzz`` over ``space``."""

    t0: float
    t2: np.ndarray
    t4: np.ndarray
    space: FieldIndexSpace
    c_log: float = 0.0

    def as_polynomial(self):
        return Polynomial4(self.t0, self.t2, self.t4, self.space.phases)

    def check_symmetry(self, tol=1e-12):
        s2 = np.abs(self.t2 - self.t2.T).max(initial=0.0)
        s4 = max(np.abs(self.t4 - np.transpose(self.t4, p)).max(initial=0.0)
                 for p in ((1, 0, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2)))
        scale = max(np.abs(self.t2).max(initial=0.0), np.abs(self.t4).max(initial=0.0), 1.0)
        return max(s2, s4) <= tol * scale


def _poly(t):
    return (t.t0, t.t2, t.t4)


@dataclass
class PertWeightState:
    """Free weight plus the order-lambda tags of its four leg positions.

    ``odd_generation`` is the level of the split that created the pending
    derivative payload, or ``None`` when there is none (level 0).
    ``lam_const`` is the order-lambda part of the constant extracted at this
    level, per vertex.
    """

    free_part: ft.FreeWeightState
    tags: list
    odd_generation: Optional[int] = None
    lam_const: float = 0.0

    @property
    def level(self):
        return self.free_part.level


@dataclass
class CubicPayload:
    """Order-lambda tags of the left (0, 1) and right (2, 3) cubic weights."""

    left: list
    right: list
    level: int
    pending_born: Optional[int]

    @property
    def tags(self):
        return self.left + self.right


def _parse_potential(potential):
    if isinstance(potential, str) and potential.replace(" ", "").lower() in ("x4", "x^4", "x**4", "quartic", "phi4"):
        return
    raise Unsupported(f"only the quartic potential x**4 is supported, got {potential!r}")


def init_pert(mass, potential="x4", strength=1.0):
    """Level-0 perturbative weight: ``-strength/2 * sum_i x_i**4`` over the four legs."""
    _parse_potential(potential)
    free = ft.init_free(mass)
    space = FieldIndexSpace.vertex(1, 0)
    tags = []
    for t in range(4):
        t4 = np.zeros((space.dim,) * 4)
        t4[t, t, t, t] = -0.5 * strength
        tags.append(PertTensors(0.0, np.zeros((space.dim, space.dim)), t4, space))
    return PertWeightState(free_part=free, tags=tags, odd_generation=None)


def split_map(chi, u_iso, side):
    """Vertex variables ``(p, zeta)`` as linear functions of cubic variables ``(y, zeta_t, zeta'')``."""
    c = u_iso.shape[1]
    lam = np.zeros((5 * chi, 3 * chi + c))
    eye2 = np.eye(2 * chi)
    if side == 0:
        lam[:2 * chi, :2 * chi] = eye2
        lam[2 * chi:4 * chi, :2 * chi] = eye2
        lam[2 * chi:4 * chi, 3 * chi:] = -u_iso
    else:
        lam[2 * chi:4 * chi, :2 * chi] = eye2
        lam[:2 * chi, :2 * chi] = eye2
        lam[:2 * chi, 3 * chi:] = u_iso
    lam[4 * chi:, 2 * chi:3 * chi] = np.eye(chi)
    return lam


def _halving_weights(chi, origin, target, rank):
    """Share of each monomial sent to ``target`` under the halving rule.

    Monomials carrying a pending derivative stay on their side of origin;
    monomials with legs on both halves are split evenly; one-sided monomials
    go to their side.
    """
    f = np.array([0] * (2 * chi) + [1] * (2 * chi) + [2] * chi)
    grids = np.meshgrid(*([f] * rank), indexing="ij")
    has_z = np.zeros(grids[0].shape, bool)
    has_l = has_z.copy()
    has_r = has_z.copy()
    for g in grids:
        has_z |= g == 2
        has_l |= g == 0
        has_r |= g == 1
    one_sided = np.where(has_l, float(target == 0), np.where(has_r, float(target == 1), float(target == origin)))
    return np.where(has_z, float(origin == target), np.where(has_l & has_r, 0.5, one_sided))


def split_pert(state, split, rule="origin"):
    """Rewrite the vertex tags as cubic tags of the left and right weights.

    ``rule="origin"`` (used by the flow) assigns each tag wholly to the
    cubic weight of its own side. ``rule="halve"`` splits monomials with legs
    on both halves evenly between the two copies; both rules recombine to
    the original polynomial, but only the origin rule stays exact once the
    vanishing splitting directions are discarded.
    """
    if rule not in ("origin", "halve"):
        raise InvalidConfig(f"unknown assignment rule {rule!r}")
    chi = state.free_part.chi
    u_iso = split.isometry
    space = FieldIndexSpace.cubic(chi, u_iso.shape[1], state.level + 1)
    maps = [split_map(chi, u_iso, 0), split_map(chi, u_iso, 1)]
    for t in state.tags:
        if t.t4.shape[0] != 5 * chi:
            raise Unsupported("tag dimension does not match a first-order vertex space")
    out = [None] * 4
    for t, tag in enumerate(state.tags):
        origin = 0 if t < 2 else 1
        if rule == "origin":
            p = transform_real(_poly(tag), maps[origin])
            out[t] = p
            continue
        for target in (0, 1):
            slot = t if target == origin else (t + 2) % 4
            w2 = _halving_weights(chi, origin, target, 2)
            w4 = _halving_weights(chi, origin, target, 4)
            t0 = tag.t0 if target == origin else 0.0
            p = transform_real((t0, w2 * tag.t2, w4 * tag.t4), maps[target])
            out[slot] = p if out[slot] is None else tuple(a + b for a, b in zip(out[slot], p))
    cub = [PertTensors(p[0], p[1], p[2], space) for p in out]
    return CubicPayload(left=cub[:2], right=cub[2:], level=state.level, pending_born=state.odd_generation)


@dataclass
class SewingMaps:
    """Real-frame means and covariances of the inner links and pending derivatives."""

    mx: np.ndarray
    mz: np.ndarray
    cxx: np.ndarray
    cxz: np.ndarray
    czz: np.ndarray


def sewing_maps(free, kernel, has_payload=True):
    chi = free.chi
    kk = np.kron(ft.CIRC, free.a_block)
    c = kernel.c
    mx = kernel.qinv @ c
    n = 4 * chi
    if not has_payload:
        z = np.zeros((n, n))
        return SewingMaps(mx, np.zeros_like(mx), kernel.qinv, z, z)
    dprev = np.tile(1.0 / free.dinv, 4)
    eye = np.eye(n)
    right = eye + kk * dprev[None, :]
    cxz = np.linalg.inv(eye + dprev[:, None] * kk)
    czz = -np.linalg.solve(right, kk)
    mz = np.linalg.solve(right, c)
    return SewingMaps(mx, mz, kernel.qinv, cxz, czz)


def _placement_map(maps, chi, c_new, ja, jb, jt, sign):
    """Cubic variables as ``i L`` times new vertex variables, plus noise ``cov``."""
    blk = lambda j: slice(j * chi, (j + 1) * chi)
    ncub = 3 * chi + c_new
    lin = np.zeros((ncub, 5 * c_new))
    lin[:chi, :4 * c_new] = maps.mx[blk(ja)]
    lin[chi:2 * chi, :4 * c_new] = maps.mx[blk(jb)]
    lin[2 * chi:3 * chi, :4 * c_new] = maps.mz[blk(jt)]
    lin[3 * chi:, 4 * c_new:] = -sign * np.eye(c_new)
    cov = np.zeros((ncub, ncub))
    xs = (blk(ja), blk(jb))
    for i1, b1 in enumerate(xs):
        for i2, b2 in enumerate(xs):
            cov[i1 * chi:(i1 + 1) * chi, i2 * chi:(i2 + 1) * chi] = maps.cxx[b1, b2]
        cov[i1 * chi:(i1 + 1) * chi, 2 * chi:3 * chi] = maps.cxz[b1, blk(jt)]
        cov[2 * chi:3 * chi, i1 * chi:(i1 + 1) * chi] = maps.cxz[b1, blk(jt)].T
    cov[2 * chi:3 * chi, 2 * chi:3 * chi] = maps.czz[blk(jt), blk(jt)]
    return lin, cov


def _check_lifetime(payload):
    if payload.pending_born is not None and payload.level - payload.pending_born != 1:
        raise OddLifetimeViolation(
            f"derivative payload created at level {payload.pending_born} reached level {payload.level}")


def coarse_grain_pert(state, payload, split, kernel, new_free=None):
    """Sew four cubic payloads into the level ``n+1`` vertex tags."""
    free = state.free_part
    if payload.level != free.level:
        raise OddLifetimeViolation(f"payload of level {payload.level} sewn at level {free.level}")
    _check_lifetime(payload)
    if new_free is None:
        new_free = ft.coarse_grain_free(free, split, kernel)
    chi, c = free.chi, split.kept_count
    maps = sewing_maps(free, kernel, payload.pending_born is not None)
    space = FieldIndexSpace.vertex(c, free.level + 1)
    cubic = payload.tags
    new_tags = [None] * 4
    for side, ja, jb, sign, npos in PLACEMENTS:
        total = None
        for k, t in enumerate((0, 1) if side == 0 else (2, 3)):
            jt = (ja, jb)[k]
            lin, cov = _placement_map(maps, chi, c, ja, jb, jt, sign)
            p = transform_real(_poly(cubic[t]), lin, cov)
            total = p if total is None else tuple(a + b for a, b in zip(total, p))
        new_tags[npos] = total
    lam_const = float(sum(p[0] for p in new_tags))
    tags = [PertTensors(0.0, p[1], p[2], space) for p in new_tags]
    return PertWeightState(free_part=new_free, tags=tags, odd_generation=free.level, lam_const=lam_const)


def closure_covariance(free):
    """Real-frame covariance of the two trace fields and the pending derivatives."""
    proj, s = ft.closure_projector(free)
    c = free.chi
    fold = proj.T @ free.m_matrix() @ proj
    kc = fold - np.kron(np.eye(2), np.diag(free.dinv))
    dc = np.tile(1.0 / free.dinv, 2)
    eye = np.eye(2 * c)
    cxz = np.linalg.inv(eye + dc[:, None] * kc)
    cov = np.block([[np.linalg.inv(fold), cxz], [cxz.T, -np.linalg.solve(eye + kc * dc[None, :], kc)]])
    return proj, s, cov


def closure_tag_covariances(free):
    """Covariance of each tag's vertex variables under the final trace, tags 0..3."""
    proj, s, cov = closure_covariance(free)
    c = free.chi
    out = []
    for t in range(4):
        link, flip = CLOSURE_LINK[t]
        g = np.zeros((5 * c, 4 * c))
        g[:4 * c, :2 * c] = proj
        g[4 * c:, 2 * c + link * c:2 * c + (link + 1) * c] = s if flip else np.eye(c)
        out.append(g @ cov @ g.T)
    return out


def close_trace_pert(state):
    """Order-lambda part of ``log Z`` of the last vertex with opposite legs identified."""
    total = 0.0
    for tag, sg in zip(state.tags, closure_tag_covariances(state.free_part)):
        r4s = np.tensordot(tag.t4, sg, axes=([2, 3], [0, 1]))
        total += tag.t0 + np.sum(tag.t2 * sg) + 3 * np.sum(r4s * sg)
    return float(total)


def _closed_terms(poly, lin, cov, sgs):
    """Constant of ``transform_real(poly, lin, cov)`` and its closure with each covariance.

    Equivalent to transforming to the vertex space and closing there, but
    the closure covariances are pulled back through ``lin`` so that no
    quartic tensor on the vertex space is built.
    """
    r0, r2, r4 = poly
    r4s = np.tensordot(r4, cov, axes=([2, 3], [0, 1]))
    n0 = r0 + np.sum(r2 * cov) + 3 * np.sum(r4s * cov)
    closed = []
    for sg in sgs:
        hat = lin @ sg @ lin.T
        r4h = np.tensordot(r4, hat, axes=([2, 3], [0, 1]))
        closed.append(-np.sum((r2 + 6 * r4s) * hat) + 3 * np.sum(r4h * hat))
    return n0, closed


def _swap_sides(poly, c):
    """Tags 2 and 3 from tags 0 and 1 by exchanging the left and right leg pairs."""
    perm = np.concatenate([np.arange(2 * c, 4 * c), np.arange(0, 2 * c), np.arange(4 * c, 5 * c)])
    t0, t2, t4 = poly
    return t0, t2[np.ix_(perm, perm)], t4[np.ix_(perm, perm, perm, perm)]


def _omega_rows(contribs, sp_full, rows):
    """Splitting-field rows of one cubic tag before truncation.

    ``contribs`` lists ``(poly, lin, cov)`` whose transforms sum to the vertex
    tag; ``sp_full`` is the untruncated split map.
    """
    r2 = r4 = None
    for poly, lin, cov in contribs:
        full = lin @ sp_full
        t0, t2, t4 = poly
        if cov is not None:
            t4s = np.tensordot(t4, cov, axes=([2, 3], [0, 1]))
            a2 = -(full.T @ (t2 + 6 * t4s) @ full)
        else:
            a2 = full.T @ t2 @ full
        a4 = contract_rows(t4, full, rows)
        r2 = a2[rows] if r2 is None else r2 + a2[rows]
        r4 = a4 if r4 is None else r4 + a4
    return r2, r4


def _level_omega(contribs_by_tag, chi, split, chi_max):
    """Omega vectors of the left cubic weight at the level of ``split``."""
    vals, u_full = split.full_isometry()
    sp_full = split_map(chi, u_full, 0)
    n_full = u_full.shape[1]
    rows = 3 * chi + np.arange(n_full)
    rows2, rows4 = [], []
    for contribs in contribs_by_tag:
        a2, a4 = _omega_rows(contribs, sp_full, rows)
        rows2.append(a2)
        rows4.append(a4)
    space = FieldIndexSpace.cubic(chi, n_full, 0)
    shared = space.mask(EVEN) | space.mask(SPLIT)
    return omega_from_rows(rows2, rows4, shared, chi_max)


def run_pert_flow(config, fused=True, omega=None, matrix_levels=()):
    """Free flow plus the order-lambda coefficient ``f1``; returns ``(report, trace)``.

    ``fused=True`` uses the left-right mirror symmetry of the tags and applies
    each sewing together with the following split, which is much faster;
    ``fused=False`` runs the step-wise path over all four tags. ``omega``
    (default: ``config.diagnostics``) records omega vectors at every level;
    ``matrix_levels`` lists levels whose truncated left cubic weight is
    summarized by ``omega_matrix`` (fused path only).
    """
    config.validate()
    if config.order != 1:
        raise InvalidConfig("run_pert_flow requires order 1")
    omega = config.diagnostics if omega is None else omega
    t0 = time.perf_counter()
    if fused:
        f0, f1, trace = _fused_flow(config, omega, set(matrix_levels))
    else:
        f0, f1, trace = _stepwise_flow(config)
    report = FreeEnergyReport(mass=config.mass, chi_max=config.chi_max,
                              sites_exponent=config.sites_exponent, order=1, f0=f0, f1=f1,
                              cdl_onset=cdl_onset(trace))
    if config.oracle:
        from .oracles import exact_f0, exact_f1
        report.f0_exact = exact_f0(config.mass)
        report.f1_exact = exact_f1(config.mass)
    report.wall_time = time.perf_counter() - t0
    return report, trace


def _fused_closure(contribs_by_tag, final):
    """Trace of the final vertex from the last sewing, without building its tags.

    Tags 0 and 1 are the two placements, tags 2 and 3 their left-right
    mirrors. Returns the closed order-lambda value and the constants of the
    two placements.
    """
    c = final.chi
    sgs = closure_tag_covariances(final)
    perm = np.concatenate([np.arange(2 * c, 4 * c), np.arange(0, 2 * c), np.arange(4 * c, 5 * c)])
    closing = 0.0
    consts = []
    for k, contribs in enumerate(contribs_by_tag):
        # a mirrored tag closed with sg equals the tag closed with the permuted sg
        pair = (sgs[k], sgs[k + 2][np.ix_(perm, perm)])
        const = 0.0
        for poly, lin, cov in contribs:
            n0, closed = _closed_terms(poly, lin, cov, pair)
            const += n0
            closing += sum(closed)
        consts.append(const)
    return closing, consts


def _stepwise_flow(config):
    levels = config.levels
    state = init_pert(config.mass)
    acc = ft.FreeEnergyAccumulator(log2_sites=levels)
    acc1 = 0.0
    trace = RGTrace()
    for _ in range(levels):
        free = state.free_part
        split = ft.split_weight(free, config.chi_max, config.zero_tol)
        kernel = ft.build_loop(free, split)
        payload = split_pert(state, split)
        new_state = coarse_grain_pert(state, payload, split, kernel)
        acc.push(new_state.level, new_state.free_part.log_norm)
        acc1 += 2.0 ** (-new_state.level) * new_state.lam_const
        rec = ft.free_level_record(free, split, new_state.free_part)
        rec.log_const1 = new_state.lam_const
        trace.append(rec)
        state = new_state
    f0 = -acc.log_z_per_site(ft.close_trace(state.free_part), state.level)
    f1 = -(acc1 + 2.0 ** (-state.level) * close_trace_pert(state))
    return f0, f1, trace


def _fused_flow(config, omega, matrix_levels=frozenset()):
    levels = config.levels
    state = init_pert(config.mass)
    free = state.free_part
    acc = ft.FreeEnergyAccumulator(log2_sites=levels)
    acc1 = 0.0
    trace = RGTrace()
    split = ft.split_weight(free, config.chi_max, config.zero_tol)
    payload = split_pert(state, split)
    cub = [_poly(t) for t in payload.left]
    pending = None  # level 0 carries no derivative payload
    omegas = {}
    if omega:
        contribs = [[(_poly(state.tags[t]), np.eye(5), None)] for t in (0, 1)]
        omegas[0] = _level_omega(contribs, free.chi, split, config.chi_max)
    for n in range(levels):
        chi = free.chi
        c = split.kept_count
        kernel = ft.build_loop(free, split)
        new_free = ft.coarse_grain_free(free, split, kernel)
        acc.push(new_free.level, new_free.log_norm)
        maps = sewing_maps(free, kernel, pending is not None)
        last = n == levels - 1
        if not last:
            next_split = ft.split_weight(new_free, config.chi_max, config.zero_tol)
            next_map = split_map(c, next_split.isometry, 0)
        new_cub = []
        contribs_by_tag = []
        for side, ja, jb, sign, npos in PLACEMENTS[:2]:
            contribs = []
            for t in (0, 1):
                jt = (ja, jb)[t]
                lin, cov = _placement_map(maps, chi, c, ja, jb, jt, sign)
                contribs.append((cub[t], lin, cov))
            contribs_by_tag.append(contribs)
        if last:
            closing, consts = _fused_closure(contribs_by_tag, new_free)
        else:
            for contribs in contribs_by_tag:
                total = None
                for poly, lin, cov in contribs:
                    p = transform_real(poly, lin @ next_map, cov)
                    if total is None:
                        total = p
                    else:
                        total = (total[0] + p[0], total[1] + p[1], np.add(total[2], p[2], out=total[2]))
                    del p
                new_cub.append(total)
            consts = [new_cub[0][0], new_cub[1][0]]
        lam_const = 2.0 * float(consts[0] + consts[1])
        acc1 += 2.0 ** (-new_free.level) * lam_const
        if omega and not last:
            omegas[new_free.level] = _level_omega(contribs_by_tag, c, next_split, config.chi_max)
        rec = ft.free_level_record(free, split, new_free)
        rec.log_const1 = lam_const
        if free.level in omegas:
            rec.omega2, rec.omega4 = omegas.pop(free.level)
        if free.level in matrix_levels:
            space = FieldIndexSpace.cubic(chi, c, free.level)
            rec.omega_matrix = omega_matrix([PertTensors(*p, space) for p in cub], config.chi_max)
        trace.append(rec)
        cub = [(0.0, p[1], p[2]) for p in new_cub]
        pending = n
        free = new_free
        if not last:
            split = next_split
    f0 = -acc.log_z_per_site(ft.close_trace(free), free.level)
    f1 = -(acc1 + 2.0 ** (-free.level) * closing)
    return f0, f1, trace


def run_pert_reference(mass, levels, chi_max, zero_tol=1e-10):
    """Complex-arithmetic reference flow over all four tags.

    Uses the actual complex coefficients, the complex joint covariance of
    inner links and derivatives and the imaginary dressing ``i Q^{-1} C``.
    Returns ``(f0, f1, residue)`` where ``residue`` is the largest imaginary
    part found in any coefficient after removing the expected ``i`` powers,
    relative to the coefficient scale.
    """
    from .wick import substitute
    state = ft.init_free(mass)
    chi = 1
    polys = []
    for t in range(4):
        t4 = np.zeros((5,) * 4, complex)
        t4[t, t, t, t] = -0.5
        polys.append((0j, np.zeros((5, 5), complex), t4))
    acc = ft.FreeEnergyAccumulator(log2_sites=levels)
    acc1 = 0j
    residue = 0.0

    def track(vals, phases):
        nonlocal residue
        t0, t2, t4 = vals
        f = 1j ** phases
        r2 = t2 / np.multiply.outer(f, f)
        r4 = t4 / np.einsum("i,j,k,l->ijkl", f, f, f, f)
        scale = max(abs(t0), np.abs(t2).max(initial=0), np.abs(t4).max(initial=0), 1e-300)
        res = max(abs(np.imag(t0)), np.abs(r2.imag).max(initial=0), np.abs(r4.imag).max(initial=0))
        residue = max(residue, res / scale)

    for n in range(levels):
        chi = state.chi
        split = ft.split_weight(state, chi_max, zero_tol)
        kernel = ft.build_loop(state, split)
        new_state = ft.coarse_grain_free(state, split, kernel)
        acc.push(new_state.level, new_state.log_norm)
        c = split.kept_count
        u_iso = split.isometry
        cub = [transform_real(polys[t], split_map(chi, u_iso, 0 if t < 2 else 1)) for t in range(4)]
        kk = np.kron(ft.CIRC, state.a_block)
        n4 = 4 * chi
        if n == 0:
            sig = np.zeros((2 * n4, 2 * n4), complex)
            sig[:n4, :n4] = kernel.qinv
            mz = np.zeros((n4, 4 * c))
        else:
            dprev = np.tile(1.0 / state.dinv, 4)
            eye = np.eye(n4)
            cxz = -1j * np.linalg.inv(eye + dprev[:, None] * kk)
            czz = np.linalg.solve(eye + kk * dprev[None, :], kk)
            sig = np.block([[kernel.qinv, cxz], [cxz.T, czz]])
            mz = np.linalg.solve(eye + kk * dprev[None, :], kernel.c)
        mid = np.vstack([1j * kernel.qinv @ kernel.c, mz])
        lnew = np.zeros((2 * n4 + c, 5 * c), complex)
        lnew[:2 * n4, :4 * c] = mid
        lnew[2 * n4:, 4 * c:] = np.eye(c)
        sig_mid = np.zeros((2 * n4 + c, 2 * n4 + c), complex)
        sig_mid[:2 * n4, :2 * n4] = sig
        new_polys = [None] * 4
        for side, ja, jb, sign, npos in PLACEMENTS:
            total = None
            for k, t in enumerate((0, 1) if side == 0 else (2, 3)):
                jt = (ja, jb)[k]
                g = np.zeros((3 * chi + c, 2 * n4 + c))
                g[:chi, ja * chi:(ja + 1) * chi] = np.eye(chi)
                g[chi:2 * chi, jb * chi:(jb + 1) * chi] = np.eye(chi)
                g[2 * chi:3 * chi, n4 + jt * chi:n4 + (jt + 1) * chi] = np.eye(chi)
                g[3 * chi:, 2 * n4:] = sign * np.eye(c)
                # cubic tags hold actual coefficients with the derivative legs' i included
                p = substitute(*cub[t], g @ lnew, g @ sig_mid @ g.T)
                total = p if total is None else tuple(a + b for a, b in zip(total, p))
            new_polys[npos] = total
        phases = np.array([0] * (4 * c) + [1] * c)
        for p in new_polys:
            track(p, phases)
            acc1 += 2.0 ** (-new_state.level) * p[0]
        polys = [(0j, p[1], p[2]) for p in new_polys]
        state = new_state
    f0 = -acc.log_z_per_site(ft.close_trace(state), state.level)
    c = state.chi
    proj, s = ft.closure_projector(state)
    fold = proj.T @ state.m_matrix() @ proj
    kc = fold - np.kron(np.eye(2), np.diag(state.dinv))
    dc = np.tile(1.0 / state.dinv, 2)
    eye = np.eye(2 * c)
    cxz = -1j * np.linalg.inv(eye + dc[:, None] * kc)
    cov = np.block([[np.linalg.inv(fold), cxz], [cxz.T, np.linalg.solve(eye + kc * dc[None, :], kc)]])
    for t in range(4):
        link, flip = CLOSURE_LINK[t]
        g = np.zeros((5 * c, 4 * c))
        g[:4 * c, :2 * c] = proj
        g[4 * c:, 2 * c + link * c:2 * c + (link + 1) * c] = s if flip else np.eye(c)
        e = substitute(*polys[t], np.zeros((5 * c, 0)), g @ cov @ g.T)[0]
        acc1 += 2.0 ** (-state.level) * e
    f1 = -acc1
    residue = max(residue, abs(f1.imag) / max(abs(f1.real), 1e-300))
    if residue > 1e-10:
        raise PhaseBookkeepingError(f"imaginary residue {residue:.3e} in the reference flow")
    return f0, f1.real, residue
