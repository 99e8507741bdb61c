"""Finite-window time averages of multitime statistics.

Every evolution interval ``dt_l`` is averaged uniformly over ``[0, T_l]``.
Expanding each unitary step in the components ``P_n (.) P_m`` turns the
average of ``|<A>_Upsilon - <A>_Omega|^2`` into a quadratic form in the
coefficients ``c_alpha = tr[A_k P_{n_k} ... A_1 P_{n_1} rho P_{m_1} ... P_{m_k}]``
weighted by per-interval phase-average matrices.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import ChoiMatrix, KrausMap, link_product
from .errors import BudgetExceeded, ValidationError
from .process import (
    ProcessTensor,
    _env_dim,
    check_state,
    embed_instrument,
    process_labels,
)
from .spectral import GapCensus, Spectrum

# largest number of levels the exact expansion accepts, per k
LEVEL_CAPS = {1: 16, 2: 8, 3: 5}
# quadrature work cap: grid nodes times matrix entries
QUAD_WORK_CAP = 2.0e8


@dataclass(frozen=True)
class TimeWindows:
    windows: tuple[float, ...]
    t_min: float = field(init=False)

    def __post_init__(self):
        w = tuple(float(t) for t in np.atleast_1d(self.windows))
        if not w:
            raise ValidationError("need at least one window")
        if any(not (t > 0) for t in w):
            raise ValidationError(f"windows must be positive, got {w}")
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "t_min", min(w))

    @property
    def k(self) -> int:
        return len(self.windows)

    @property
    def finite(self) -> bool:
        return all(math.isfinite(t) for t in self.windows)

    @classmethod
    def uniform(cls, t: float, k: int) -> "TimeWindows":
        return cls((t,) * k)


@dataclass(frozen=True)
class GTensors:
    """Phase-average matrices for one window.

    ``g2`` is indexed by level pairs ``alpha = n * d_H + m`` on both sides,
    ``g1`` by ``(n, m)``.
    """

    g2: np.ndarray
    g1: np.ndarray
    window: float

    @property
    def num_levels(self) -> int:
        return self.g1.shape[0]


def phase_average(delta, t: float):
    """Mean of ``exp(-i delta dt)`` for ``dt`` uniform on ``[0, t]``.

    Closed form ``(1 - exp(-i delta t)) / (i delta t)``, written as
    ``exp(-i delta t / 2) sinc(delta t / 2)`` so small ``delta t`` is stable.
    An infinite window gives the indicator of ``delta == 0``.
    """
    delta = np.asarray(delta, dtype=float)
    if not t > 0:
        raise ValidationError("window must be positive")
    if math.isinf(t):
        out = (delta == 0).astype(complex)
    else:
        x = delta * t
        out = np.exp(-0.5j * x) * np.sinc(x / (2 * np.pi))
        out = np.where(delta == 0, 1.0 + 0j, out)
    return complex(out) if out.ndim == 0 else out


def trapezoid_weights(points: int, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on ``[0, t]`` and weights that sum to one."""
    if points < 2:
        raise ValidationError("quadrature needs at least 2 points per axis")
    nodes = np.linspace(0.0, t, points)
    w = np.full(points, 1.0 / (points - 1))
    w[[0, -1]] *= 0.5
    return nodes, w


def gap_matrix(s: Spectrum) -> np.ndarray:
    e = s.energies
    return e[:, None] - e[None, :]


def _quartet_gaps(s: Spectrum) -> np.ndarray:
    """``E_n - E_m - E_n' + E_m'`` indexed ``[(n,m), (n',m')]``."""
    g = gap_matrix(s).reshape(-1)
    return g[:, None] - g[None, :]


def _snap(delta: np.ndarray, tol: float) -> np.ndarray:
    return np.where(np.abs(delta) <= tol, 0.0, delta)


def build_g_tensors(s: Spectrum, t: float) -> GTensors:
    """Phase averages for window ``t``; ``t = inf`` gives the resonance indicators.

    Frequencies within a few degeneracy tolerances of zero are treated as
    exact resonances, matching the level clustering.
    """
    tol = 4 * s.degeneracy_tol
    g2 = phase_average(_snap(_quartet_gaps(s), tol), t)
    g1 = phase_average(_snap(gap_matrix(s), tol), t)
    return GTensors(np.atleast_2d(g2), np.atleast_2d(g1), float(t))


def offdiagonal_pairs(d_h: int) -> np.ndarray:
    n, m = np.divmod(np.arange(d_h * d_h), d_h)
    return np.flatnonzero(n != m)


def g_norm(gt: GTensors, sector: str = "offdiagonal") -> float:
    """Largest singular value of ``g2``.

    By default only level pairs with ``n != m`` are kept, which is the block
    the second-moment expansion applies it to; ``sector="full"`` uses the
    whole matrix.  An empty sector has norm zero.
    """
    if sector == "full":
        block = gt.g2
    elif sector == "offdiagonal":
        idx = offdiagonal_pairs(gt.num_levels)
        block = gt.g2[np.ix_(idx, idx)]
    else:
        raise ValidationError(f"unknown sector {sector!r}")
    if block.size == 0:
        return 0.0
    return float(np.linalg.norm(block, 2))


def g_factor(census: GapCensus, t: float, epsilon: float) -> float:
    """``N(eps) (1 + 8 log2(d_H) / (eps T))``; one when there is a single level."""
    if not epsilon > 0 or not t > 0:
        raise ValidationError("epsilon and T must be positive")
    if census.num_levels < 2:
        return 1.0
    return census.n_epsilon * (1.0 + 8.0 * math.log2(census.num_levels) / (epsilon * t))


def s_factor(s: Spectrum, t: float) -> float:
    """Largest ``|G_nm|`` over distinct levels, by enumeration; zero for one level."""
    if not t > 0:
        raise ValidationError("window must be positive")
    if s.num_levels < 2:
        return 0.0
    if math.isinf(t):
        return 0.0
    gaps = np.abs(gap_matrix(s)[~np.eye(s.num_levels, dtype=bool)])
    return float(np.abs(np.sinc(gaps * t / (2 * np.pi))).max())


def min_gap_sinc(s: Spectrum, t: float) -> float:
    """``|sinc(T dE_min / 2)|``, the closed-form shortcut for :func:`s_factor`."""
    if s.num_levels < 2:
        return 0.0
    return float(abs(np.sinc(np.diff(s.energies).min() * t / (2 * np.pi))))


# --------------------------------------------------------------------------- #
# exact expansion
# --------------------------------------------------------------------------- #

def _lift(instruments: Sequence[KrausMap], s: Spectrum) -> list[np.ndarray]:
    """Kraus stacks of ``A_j (x) 1_E`` expressed in the energy eigenbasis."""
    v = s.basis
    out = []
    for m in instruments:
        full = embed_instrument(m, s) if m.dim_in != s.total_dim else m
        if full.dim_in != s.total_dim or full.dim_out != s.total_dim:
            raise ValidationError(
                f"instrument maps {m.dim_in}->{m.dim_out}; it must act on the system factor of dim {s.total_dim}"
            )
        out.append(np.stack([v.conj().T @ kop @ v for kop in full.kraus_ops]))
    return out


def _apply_kraus(stack: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("aij,...jk,alk->...il", stack, x, stack.conj(), optimize=True)


def _povm(stack: np.ndarray) -> np.ndarray:
    return np.einsum("aji,ajk->ik", stack.conj(), stack)


def _check_budget(s: Spectrum, k: int) -> None:
    cap = LEVEL_CAPS.get(k)
    terms = s.num_levels ** (4 * k)
    if cap is None or s.num_levels > cap:
        limit = "no exact expansion beyond k=3" if cap is None else f"at most {cap} levels for k={k}"
        raise BudgetExceeded(
            f"exact second moment would sum {terms:.3e} terms ({s.num_levels} levels, k={k}); {limit}"
        )


def coefficient_tensor(s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap]) -> np.ndarray:
    """``c[n1, m1, ..., nk, mk]`` for the outcome chain ``instruments``."""
    k = len(instruments)
    _check_budget(s, k)
    rho = check_state(rho, s.total_dim)
    stacks = _lift(instruments, s)
    labels = s.labels
    d_h = s.num_levels
    onehot = (labels[None, :] == np.arange(d_h)[:, None]).astype(float)
    # masks[n, m] keeps block (n, m) of a matrix in the eigenbasis
    masks = onehot[:, None, :, None] * onehot[None, :, None, :]
    x = s.to_eigenbasis(rho)
    for j, stack in enumerate(stacks):
        x = x[..., None, None, :, :] * masks
        if j < k - 1:
            x = _apply_kraus(stack, x)
    c = np.einsum("ji,...ij->...", _povm(stacks[-1]), x)
    return c.reshape((d_h,) * (2 * k))


def _pair_view(c: np.ndarray, k: int) -> np.ndarray:
    d_h = c.shape[0] if c.ndim else 1
    return c.reshape((d_h * d_h,) * k)


def _quadratic_form(cp: np.ndarray, cq: np.ndarray, g2s: Sequence[np.ndarray]) -> complex:
    """``sum_{alpha, alpha'} cp_alpha prod_l g_l[alpha_l, alpha'_l] conj(cq_alpha')`` with fsum."""
    y = cq.conj()
    for axis, g in enumerate(g2s):
        y = np.moveaxis(np.tensordot(g, y, axes=([1], [axis])), 0, axis)
    terms = (cp * y).reshape(-1)
    return complex(math.fsum(terms.real), math.fsum(terms.imag))


def _offdiag_indicator(d_h: int) -> np.ndarray:
    return ~np.eye(d_h, dtype=bool).reshape(-1)


def _pattern_mask(d_h: int, k: int, pattern: frozenset) -> np.ndarray:
    """Pairs off-diagonal exactly on the intervals in ``pattern`` (0-based)."""
    off = _offdiag_indicator(d_h)
    axes = [off if l in pattern else ~off for l in range(k)]
    mask = axes[0]
    for a in axes[1:]:
        mask = np.multiply.outer(mask, a)
    return mask


def _g2_list(s: Spectrum, tw: TimeWindows) -> list[np.ndarray]:
    return [build_g_tensors(s, t).g2 for t in tw.windows]


def second_moment_terms(
    s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap], tw: TimeWindows
) -> dict[tuple[frozenset, frozenset], complex]:
    """Cross terms of the average, keyed by which intervals are off-diagonal.

    Each key ``(P, Q)`` pairs the part of the expansion that is off-diagonal
    exactly on the intervals ``P`` with the conjugated part for ``Q``; the
    real parts of all entries sum to :func:`analytic_second_moment`.
    """
    k = len(instruments)
    if tw.k != k:
        raise ValidationError(f"{tw.k} windows for {k} instruments")
    c = _pair_view(coefficient_tensor(s, rho, instruments), k)
    g2s = _g2_list(s, tw)
    d_h = s.num_levels
    patterns = [frozenset(p) for r in range(1, k + 1) for p in itertools.combinations(range(k), r)]
    parts = {p: np.where(_pattern_mask(d_h, k, p), c, 0) for p in patterns}
    return {(p, q): _quadratic_form(parts[p], parts[q], g2s) for p in patterns for q in patterns}


def analytic_second_moment(
    s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap], tw: TimeWindows
) -> float:
    """Exact window average of ``|<A>_Upsilon - <A>_Omega|^2``.

    ``instruments`` are the outcome maps ``A_1 ... A_k`` (on the system, or
    on system and environment).  Infinite windows give the infinite-time
    average.
    """
    k = len(instruments)
    if tw.k != k:
        raise ValidationError(f"{tw.k} windows for {k} instruments")
    c = _pair_view(coefficient_tensor(s, rho, instruments), k)
    diag = ~_offdiag_indicator(s.num_levels)
    all_diag = diag
    for _ in range(k - 1):
        all_diag = np.multiply.outer(all_diag, diag)
    c = np.where(all_diag, 0, c)
    value = _quadratic_form(c, c, _g2_list(s, tw)).real
    return max(value, 0.0) if value > -1e-13 else value


def infinite_time_second_moment(s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap]) -> float:
    return analytic_second_moment(s, rho, instruments, TimeWindows.uniform(math.inf, len(instruments)))


# --------------------------------------------------------------------------- #
# quadrature
# --------------------------------------------------------------------------- #

def _phase_grid(s: Spectrum, nodes: np.ndarray) -> np.ndarray:
    lam = s.eigenvalues
    return np.exp(-1j * np.multiply.outer(nodes, lam[:, None] - lam[None, :]))


def equilibrium_value(s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap]) -> complex:
    """``<A>_Omega`` for an outcome chain, evaluated in the eigenbasis."""
    stacks = _lift(instruments, s)
    same = s.labels[:, None] == s.labels[None, :]
    x = s.to_eigenbasis(np.asarray(rho, dtype=complex))
    for stack in stacks[:-1]:
        x = _apply_kraus(stack, x * same)
    return complex(np.sum(_povm(stacks[-1]).T * (x * same)))


def quadrature_values(
    s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap], node_sets: Sequence[np.ndarray]
) -> np.ndarray:
    """``<A>_Upsilon`` on the product grid ``node_sets[0] x ... x node_sets[k-1]``."""
    stacks = _lift(instruments, s)
    x = s.to_eigenbasis(np.asarray(rho, dtype=complex))
    k = len(stacks)
    for j, (stack, nodes) in enumerate(zip(stacks, node_sets)):
        x = x[..., None, :, :] * _phase_grid(s, nodes)
        if j < k - 1:
            x = _apply_kraus(stack, x)
    return np.einsum("ji,...ij->...", _povm(stacks[-1]), x)


def quadrature_second_moment(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    tw: TimeWindows,
    grid_points: int,
) -> float:
    """Product trapezoid rule for the window average, ``grid_points`` nodes per axis."""
    k = len(instruments)
    if tw.k != k:
        raise ValidationError(f"{tw.k} windows for {k} instruments")
    d = s.total_dim
    work = float(grid_points) ** k * d * d
    if work > QUAD_WORK_CAP:
        raise BudgetExceeded(f"quadrature would touch {work:.3e} matrix entries (cap {QUAD_WORK_CAP:.1e})")
    rho = check_state(rho, d)
    grids = [trapezoid_weights(grid_points, t) for t in tw.windows]
    omega = equilibrium_value(s, rho, instruments)
    total = []
    # chunk over the first axis to bound memory
    for i, (t1, w1) in enumerate(zip(*grids[0])):
        nodes = [np.array([t1])] + [g[0] for g in grids[1:]]
        vals = quadrature_values(s, rho, instruments, nodes)[0]
        sq = np.abs(vals - omega) ** 2
        for g in reversed(grids[1:]):
            sq = sq @ g[1]
        total.append(w1 * float(sq))
    return math.fsum(total)


# --------------------------------------------------------------------------- #
# averaged process tensors
# --------------------------------------------------------------------------- #

def averaged_unitary_choi(s: Spectrum, t: float, grid_points: int | None = None) -> np.ndarray:
    """Window average of the Choi matrix of ``exp(-i H dt)``.

    Uses the exact phase average, or the trapezoid rule when
    ``grid_points`` is given.
    """
    v = s.basis
    lam = s.eigenvalues
    delta = lam[:, None] - lam[None, :]
    if grid_points is None:
        avg = phase_average(_snap(delta, 4 * s.degeneracy_tol), t)
        avg = np.atleast_2d(avg)
    else:
        nodes, w = trapezoid_weights(grid_points, t)
        avg = np.tensordot(w, np.exp(-1j * np.multiply.outer(nodes, delta)), axes=1)
    # |v_a v_a^dag>> as rows
    vecs = np.einsum("ia,ja->aij", v, v.conj()).reshape(len(lam), -1)
    return vecs.T @ avg @ vecs.conj()


def time_averaged_process(
    s: Spectrum,
    rho: np.ndarray,
    tw: TimeWindows,
    d_s: int,
    grid_points: int | None = None,
) -> ProcessTensor:
    """Process tensor averaged independently over every interval.

    The process is linear in each step's Choi matrix, so the product-box
    average equals the process assembled from per-window averaged steps.
    """
    d_e = _env_dim(s, d_s)
    rho = check_state(rho, s.total_dim)
    x = ChoiMatrix(rho, (("s0", d_s), ("e0", d_e)))
    for j, t in enumerate(tw.windows, start=1):
        prev = "s0" if j == 1 else f"{j - 1}o"
        legs = ((f"{j}i", d_s), (f"e{j}", d_e), (prev, d_s), (f"e{j - 1}", d_e))
        step = ChoiMatrix(averaged_unitary_choi(s, t, grid_points), legs)
        x = link_product(step, x)
    k = tw.k
    choi = x.trace_out([f"e{k}"]).reorder(process_labels(k))
    return ProcessTensor(choi, k, d_s, d_e, None, "time-averaged")


def grid_averaged_process(
    s: Spectrum, rho: np.ndarray, tw: TimeWindows, d_s: int, grid_points: int
) -> ProcessTensor:
    """Brute-force trapezoid average of ``build_process`` over the full product grid."""
    from .process import build_process

    grids = [trapezoid_weights(grid_points, t) for t in tw.windows]
    acc = None
    for combo in itertools.product(*[range(grid_points)] * tw.k):
        dts = [grids[l][0][i] for l, i in enumerate(combo)]
        w = math.prod(grids[l][1][i] for l, i in enumerate(combo))
        p = build_process(s, rho, dts, d_s)
        acc = w * p.matrix if acc is None else acc + w * p.matrix
    legs = process_labels(tw.k)
    d_e = _env_dim(s, d_s)
    return ProcessTensor(ChoiMatrix(acc, tuple((l, d_s) for l in legs)), tw.k, d_s, d_e, None, "time-averaged")
