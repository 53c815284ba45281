"""Exact gaussian TRG flow of the free link-field boson.

A level-n Boltzmann weight is ``exp(-x M_n x / 2)`` over four legs, each
carrying ``chi`` fields. Legs are stored in the order (1, 2, 4, 3), so that
positions 0 and 1 form the left half and positions 2 and 3 the right half.
The per-vertex matrix is

    M_n = 1_2 (x) A_n + [[1, -1], [-1, 1]] (x) B_n,
    A_n = 1/2 1_2 (x) D_{n-1}^{-1} + [[1, -1], [-1, 1]] (x) a_n,

so a weight is fully described by ``a_n``, the diagonal of ``D_{n-1}^{-1}``
and ``B_n``. At level 0 the diagonal holds ``m**2`` and ``a_0 = [[1]]``.
"""
from dataclasses import dataclass, field
import time

import numpy as np

from . import symlin
from .diagnostics import cdl_distance, cdl_onset
from .errors import (DegenerateWeight, InternalInvariantViolation, InvalidConfig,
                     NonNormalizableTrace, SingularMatrix, StructureViolation)
from .trace import FreeEnergyReport, LevelRecord, RGTrace

LOG2PI = np.log(2 * np.pi)
SQ2 = np.sqrt(2.0)
# nearest-neighbour pattern of the four inner links of a plaquette
CIRC = np.array([[2, -1, 0, -1], [-1, 2, -1, 0], [0, -1, 2, -1], [-1, 0, -1, 2]], float)
PAIR = np.array([[1.0, -1.0], [-1.0, 1.0]])


@dataclass
class FreeWeightState:
    """Gaussian weight at level ``level``.

    ``dinv`` is the diagonal of ``D_{n-1}^{-1}``; at level 0 there is no
    previous split and it carries the mass term ``m**2`` instead.
    ``u_count`` is the number of symmetric-sector fields of the split that
    produced this level; it fixes the gauge of the final trace.
    """

    level: int
    chi: int
    dinv: np.ndarray
    a_block: np.ndarray
    b: np.ndarray
    log_norm: float = 0.0
    u_count: int = 0

    @property
    def d_prev(self):
        """Diagonal of ``D_{n-1}``, or ``None`` at level 0."""
        if self.level == 0:
            return None
        return 1.0 / self.dinv

    @property
    def a(self):
        """Per-side matrix ``A_n`` of shape ``(2 chi, 2 chi)``."""
        return 0.5 * np.kron(np.eye(2), np.diag(self.dinv)) + np.kron(PAIR, self.a_block)

    def m_matrix(self):
        """Full vertex matrix ``M_n`` over the four legs."""
        return np.kron(np.eye(2), self.a) + np.kron(PAIR, self.b)


@dataclass
class SplitData:
    """Gaussian SVD of ``B_n``.

    The kept fields are ordered by sector: the ``u`` columns (eigenvectors of
    ``P + R``) first, then the ``v`` columns (eigenvectors of ``P - R``), each
    block sorted by descending eigenvalue. ``spectrum`` lists every eigenvalue
    of ``B_n`` in descending order before any field is discarded.
    """

    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    log_rho: float
    kept_count: int
    discarded_zero_count: int
    truncated_count: int
    spectrum: np.ndarray
    sym_values: np.ndarray = field(repr=False, default=None)
    sym_vectors: np.ndarray = field(repr=False, default=None)
    anti_values: np.ndarray = field(repr=False, default=None)
    anti_vectors: np.ndarray = field(repr=False, default=None)

    @property
    def u_count(self):
        return self.u.shape[1]

    @property
    def isometry(self):
        """``U_n = [[u, v], [u, -v]] / sqrt(2)``."""
        return np.block([[self.u, self.v], [self.u, -self.v]]) / SQ2

    def full_isometry(self):
        """All ``2 chi`` columns of ``U_n`` sorted by descending eigenvalue.

        Includes truncated and vanishing directions; used by diagnostics.
        """
        vals = np.concatenate([self.sym_values, self.anti_values])
        cols = np.hstack([np.vstack([self.sym_vectors, self.sym_vectors]),
                          np.vstack([self.anti_vectors, -self.anti_vectors])]) / SQ2
        order = np.argsort(-vals, kind="stable")
        return vals[order], cols[:, order]


@dataclass
class LoopKernel:
    """Quadratic form ``q`` of the four inner links and couplings to the outer fields."""

    q: np.ndarray
    c_left: np.ndarray
    c_right: np.ndarray
    qinv: np.ndarray = field(repr=False, default=None)
    logdet_q: float = 0.0

    @property
    def c(self):
        return np.hstack([self.c_left, self.c_right])


@dataclass
class FreeEnergyAccumulator:
    """Log-space bookkeeping of the constants extracted at every level.

    Entries are ``(level, log_const, vertices_remaining)`` where the constant
    is extracted once per vertex of the coarse lattice at ``level``.
    """

    log2_sites: int
    per_level_log: list = field(default_factory=list)

    @property
    def total_sites(self):
        return 2 ** self.log2_sites

    def push(self, level, log_const):
        self.per_level_log.append((level, float(log_const), 2 ** (self.log2_sites - level)))

    def log_z_per_site(self, log_z_final, final_level):
        acc = 0.0
        for level, log_const, _ in self.per_level_log:
            acc += 2.0 ** (-level) * log_const
        return acc + 2.0 ** (-final_level) * log_z_final


def init_free(mass):
    """Level-0 weight of the link-field model with mass ``mass``."""
    if not np.isfinite(mass) or mass < 0:
        raise InvalidConfig(f"mass must be non-negative, got {mass}")
    return FreeWeightState(level=0, chi=1, dinv=np.array([mass * mass]),
                           a_block=np.array([[1.0]]), b=np.eye(2))


def split_weight(state, chi_max, zero_tol=1e-10):
    """Gaussian SVD of ``B_n`` with zero removal and truncation to ``chi_max``.

    ``B_n = [[P, R], [R, P]]`` is diagonalized sector by sector, which keeps
    the block form of ``U_n`` even when eigenvalues are degenerate.
    """
    chi = state.chi
    p = state.b[:chi, :chi]
    r = state.b[:chi, chi:]
    sym = symlin.eig_sym(p + r)
    anti = symlin.eig_sym(p - r)
    top = max(sym.values[0], anti.values[0])
    if not top > 0:
        raise DegenerateWeight(f"level {state.level}: B has no positive eigenvalue")
    # merge both sectors in descending order, ties resolved symmetric-first
    cand = [(-sym.values[j], 0, j) for j in range(chi)] + [(-anti.values[j], 1, j) for j in range(chi)]
    cand.sort()
    spectrum = np.array([-c[0] for c in cand])
    nonzero = [c for c in cand if -c[0] > zero_tol * top]
    if not nonzero:
        raise DegenerateWeight(f"level {state.level}: all singular values below zero_tol")
    kept = nonzero[:chi_max]
    us = [c[2] for c in kept if c[1] == 0]
    vs = [c[2] for c in kept if c[1] == 1]
    d = np.concatenate([sym.values[us], anti.values[vs]])
    log_rho = 0.5 * (len(d) * LOG2PI + float(np.sum(np.log(d))))
    return SplitData(u=sym.vectors[:, us], v=anti.vectors[:, vs], d=d, log_rho=log_rho,
                     kept_count=len(kept), discarded_zero_count=2 * chi - len(nonzero),
                     truncated_count=len(nonzero) - len(kept), spectrum=spectrum,
                     sym_values=sym.values, sym_vectors=sym.vectors,
                     anti_values=anti.values, anti_vectors=anti.vectors)


def _coupling_blocks(split, chi):
    cu = split.u / SQ2
    cv = split.v / SQ2
    zu = np.zeros_like(cu)
    zv = np.zeros_like(cv)
    c_left = np.block([[cu, cv, zu, zv], [cu, -cv, -cu, cv], [zu, zv, -cu, -cv], [zu, zv, zu, zv]])
    c_right = np.block([[-cu, -cv, zu, zv], [zu, zv, zu, zv], [zu, zv, cu, cv], [-cu, cv, cu, -cv]])
    return c_left, c_right


def build_loop(state, split):
    """Kernel of the plaquette integral that sews four cubic weights."""
    chi = state.chi
    if split.u.shape[0] != chi or split.v.shape[0] != chi:
        raise InternalInvariantViolation(
            f"split isometries have {split.u.shape[0]} rows, state has chi={chi}")
    q = np.kron(np.eye(4), np.diag(state.dinv)) + np.kron(CIRC, state.a_block)
    c_left, c_right = _coupling_blocks(split, chi)
    # fields with tiny kept singular values make the diagonal of q span many
    # decades; a symmetric diagonal rescaling keeps the eigensolve well conditioned
    diag = np.diag(q)
    if not np.all(diag > 0):
        bad = int(np.argmin(diag))
        raise SingularMatrix(bad, diag[bad], f"loop kernel at level {state.level} has a non-positive diagonal")
    scale = 1.0 / np.sqrt(diag)
    eig = symlin.eig_sym(q * np.outer(scale, scale))
    tol = symlin.PD_TOLERANCE * max(abs(eig.values[0]), np.finfo(float).tiny)
    if eig.values[-1] <= tol:
        bad = int(np.argmax(eig.values <= tol))
        raise SingularMatrix(bad, eig.values[bad], f"loop kernel at level {state.level} is not positive definite")
    v = eig.vectors * scale[:, None]
    qinv = (v / eig.values) @ v.T
    qinv = 0.5 * (qinv + qinv.T)
    return LoopKernel(q=q, c_left=c_left, c_right=c_right, qinv=qinv,
                      logdet_q=float(np.sum(np.log(eig.values)) + np.sum(np.log(diag))))


def check_loop_structure(kernel, state):
    """Assert the circulant block pattern of ``q`` and the zero coupling rows."""
    chi = state.chi
    blk = lambda i, j: kernel.q[i * chi:(i + 1) * chi, j * chi:(j + 1) * chi]
    diag = np.diag(state.dinv) + 2 * state.a_block
    for i in range(4):
        if not np.array_equal(blk(i, i), diag):
            raise StructureViolation(f"q diagonal block {i} differs from D^-1 + 2a")
        if not np.array_equal(blk(i, (i + 1) % 4), -state.a_block):
            raise StructureViolation(f"q block ({i},{(i + 1) % 4}) differs from -a")
        if np.any(blk(i, (i + 2) % 4)):
            raise StructureViolation(f"q opposite block ({i},{(i + 2) % 4}) is non-zero")
    if np.any(kernel.c_left[3 * chi:]) or np.any(kernel.c_right[chi:2 * chi]):
        raise StructureViolation("coupling rows that must vanish are non-zero")


def coarse_grain_free(state, split, kernel, structure_tol=1e-9):
    """Contract four cubic weights into the level ``n+1`` vertex."""
    c_left, c_right = kernel.c_left, kernel.c_right
    qi = kernel.qinv
    y_ll = c_left.T @ qi @ c_left
    y_lr = c_left.T @ qi @ c_right
    b_new = -0.5 * (y_lr + y_lr.T)
    c = len(split.d)
    a_full = 0.5 * np.kron(np.eye(2), np.diag(1.0 / split.d)) + y_ll + y_lr
    a_full = 0.5 * (a_full + a_full.T)
    a_new = -a_full[:c, c:]
    a_new = 0.5 * (a_new + a_new.T)
    dinv = 1.0 / split.d
    expect = 0.5 * np.kron(np.eye(2), np.diag(dinv)) + np.kron(PAIR, a_new)
    scale = np.linalg.norm(a_full)
    dev = np.linalg.norm(a_full - expect)
    if dev > structure_tol * scale:
        raise StructureViolation(
            f"level {state.level + 1}: A deviates from 1/2 D^-1 + [[a,-a],[-a,a]] "
            f"by {dev:.3e} (norm {scale:.3e})")
    log_g = 2 * state.chi * LOG2PI - 0.5 * kernel.logdet_q
    log_norm = log_g - 2.0 * split.log_rho
    return FreeWeightState(level=state.level + 1, chi=c, dinv=dinv, a_block=a_new, b=b_new,
                           log_norm=log_norm, u_count=split.u_count)


def closure_projector(state):
    """Map of the two trace fields ``(X, Y)`` onto the four legs of the last vertex."""
    c = state.chi
    s = np.diag(np.array([-1.0] * state.u_count + [1.0] * (c - state.u_count)))
    i = np.eye(c)
    o = np.zeros((c, c))
    return np.block([[i, o], [o, i], [o, s], [s, o]]), s


def close_trace(state):
    """``log Z`` of a single vertex with opposite legs identified."""
    proj, _ = closure_projector(state)
    folded = proj.T @ state.m_matrix() @ proj
    try:
        logdet = symlin.logdet_sym(folded)
    except SingularMatrix as exc:
        raise NonNormalizableTrace(f"folded trace form is not positive definite: {exc}") from exc
    return state.chi * LOG2PI - 0.5 * logdet


def free_level_record(state, split, new_state):
    return LevelRecord(level=state.level, chi_pre=2 * state.chi, chi_post=split.kept_count,
                       singular_values=split.spectrum.copy(), cdl_distance=cdl_distance(state),
                       log_const=new_state.log_norm)


def run_free_flow(config):
    """Full free flow on ``N = 2**(2k)`` vertices; returns ``(report, trace)``."""
    config.validate()
    t0 = time.perf_counter()
    levels = config.levels
    state = init_free(config.mass)
    acc = FreeEnergyAccumulator(log2_sites=levels)
    trace = RGTrace()
    for _ in range(levels):
        split = split_weight(state, config.chi_max, config.zero_tol)
        kernel = build_loop(state, split)
        new_state = coarse_grain_free(state, split, kernel)
        acc.push(new_state.level, new_state.log_norm)
        trace.append(free_level_record(state, split, new_state))
        state = new_state
    log_z_final = close_trace(state)
    f0 = -acc.log_z_per_site(log_z_final, state.level)
    report = FreeEnergyReport(mass=config.mass, chi_max=config.chi_max,
                              sites_exponent=config.sites_exponent, order=0, f0=f0,
                              cdl_onset=cdl_onset(trace))
    if config.oracle:
        from .oracles import exact_f0
        report.f0_exact = exact_f0(config.mass)
    report.wall_time = time.perf_counter() - t0
    return report, trace
