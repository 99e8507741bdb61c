"""Right-hand sides of the equilibration bounds and checks of their ingredients."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .channels import KrausMap, compose, dephasing_channel, povm_norm
from .errors import ValidationError
from .process import (
    d_eff_stages,
    dephase,
    effective_dimension,
    embed_instrument,
    intermediate_state,
)
from .spectral import GapCensus, Spectrum, gap_census
from .timeavg import (
    TimeWindows,
    _lift,
    _povm,
    _apply_kraus,
    analytic_second_moment,
    g_factor,
    infinite_time_second_moment,
    s_factor,
)

SLACK_TOL = 1e-9


def digest(*arrays, **meta) -> str:
    """sha256 over exact array bytes and sorted metadata."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=complex))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    h.update(json.dumps(meta, sort_keys=True, default=str).encode())
    return h.hexdigest()


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    bound_name: str
    inputs_digest: str = ""
    details: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def holds(self, tol: float = SLACK_TOL) -> bool:
        return self.slack >= -tol * max(1.0, abs(self.rhs))

    def to_json(self) -> dict:
        out = asdict(self)
        out["slack"] = self.slack
        out["holds"] = self.holds()
        return out


# --------------------------------------------------------------------------- #
# bound expressions
# --------------------------------------------------------------------------- #

def infinite_time_rhs(povm_norms: Sequence[float], d_effs: Sequence[float], k: int) -> float:
    """``max_j (2^k - 1) ||A_{k:...:j+1}||^2 / d_eff[A_j(omega_j)]`` over the stages listed."""
    if not povm_norms or len(povm_norms) != len(d_effs):
        raise ValidationError("need matching, nonempty per-stage norm and d_eff lists")
    return max((2**k - 1) * a / d for a, d in zip(povm_norms, d_effs))


def k1_rhs(g1: float, norm_a1: float, deff_min: float) -> float:
    return g1 * norm_a1 / deff_min


def k2_rhs(
    g1: float,
    g2: float,
    s1: float,
    s2: float,
    norm_a2: float,
    norm_a21: float,
    deff_min: float,
    min_replacement: bool = False,
) -> float:
    """Two-time bound; ``norm_*`` are squared POVM norms.

    With ``min_replacement`` the last term is replaced by the smaller of
    itself and ``8 s1 s2``.
    """
    main = (
        g1 * g2 * norm_a2
        + g1 * norm_a21
        + g2 * norm_a2
        + 4 * g1 * s2 * norm_a21
        + 4 * g2 * s1 * norm_a2
    ) / deff_min
    last = 2 * math.sqrt(g1 * g2 * norm_a2 * norm_a21) / deff_min
    if min_replacement:
        last = min(last, 8 * s1 * s2)
    return main + last


def k3_bracket(gs: Sequence[float], ss: Sequence[float], norms: Sequence[float]) -> float:
    """The three-time bound times ``d_eff_min``.

    ``norms`` are the squared POVM norms of ``A_3``, ``A_{3:2}`` and ``A_{3:1}``.
    """
    g1, g2, g3 = gs
    t1, t2, t3 = (2 * s for s in ss)
    a3, a32, a31 = norms
    diagonal = (1 + g1 + g2 + g1 * g2) * g3 * a3 + (g1 + 1) * g2 * a32 + g1 * a31
    cross = (
        (t2 + t3) * g1 * a31
        + (t1 + t3) * g2 * a32
        + (t1 + t2) * g3 * a3
        + g1 * g2 * t3 * a32
        + g1 * g3 * t2 * a3
        + g2 * g3 * t1 * a3
    )
    pairs = (
        math.sqrt(g1 * g2 * a31 * a32)
        + math.sqrt(g1 * g3 * a31 * a3)
        + math.sqrt(g2 * g3 * a32 * a3)
    )
    doubles = 2 * g1 * t2 * t3 * a31 + 2 * g2 * t1 * t3 * a32 + 2 * g3 * t1 * t2 * a3
    triple = 3 * math.sqrt(g1 * g2 * g3 * a31 * a32 * a3)
    return diagonal + 2 * (cross + pairs + doubles + triple)


def k3_rhs(gs: Sequence[float], ss: Sequence[float], norms: Sequence[float], deff_min: float) -> float:
    if math.isinf(deff_min):
        return 0.0
    return k3_bracket(gs, ss, norms) / deff_min


def ck_constant(census: GapCensus, tw: TimeWindows, epsilon: float, k: int) -> float:
    """``2^(3k-1) g^k`` with the gap factor evaluated at the shortest window."""
    g = g_factor(census, tw.t_min, epsilon)
    return 2.0 ** (3 * k - 1) * g**k


def ck_rhs(census: GapCensus, tw: TimeWindows, epsilon: float, k: int, deff_min: float) -> float:
    return ck_constant(census, tw, epsilon, k) / deff_min


def diamond_bound_rhs(total_outcomes, ck: float, deff_min: float) -> float:
    """``S sqrt(C_k) / (2 sqrt(d_eff_min))``; accepts an instrument set or its outcome count."""
    n = getattr(total_outcomes, "total_outcomes", total_outcomes)
    return n * math.sqrt(ck) / (2.0 * math.sqrt(deff_min))


@dataclass(frozen=True)
class ConditionsReport:
    time_margin: float
    time_ok: bool
    k_margin: float
    k_ok: bool


def conditions_check(census: GapCensus, tw: TimeWindows, k: int, deff_min: float, epsilon: float) -> ConditionsReport:
    """Margins of ``T_min >~ log2(d_H) / eps`` and ``k << log2(d_eff_min) / 3``.

    Margins are ratios (left side over right side, or the reverse for k);
    values above one mean the condition holds.  Advisory only.
    """
    log_dh = math.log2(census.num_levels) if census.num_levels > 1 else 0.0
    time_margin = math.inf if log_dh == 0 else tw.t_min * epsilon / log_dh
    k_margin = (math.log2(deff_min) / 3.0) / k if deff_min > 1 else 0.0
    return ConditionsReport(time_margin, time_margin >= 1.0, k_margin, k_margin > 1.0)


# --------------------------------------------------------------------------- #
# POVM norms of compositions
# --------------------------------------------------------------------------- #

def composition_norm(s: Spectrum, instruments: Sequence[KrausMap], pattern: Sequence[str]) -> float:
    """Squared POVM norm of ``A_k D_k ... D_{j+1} A_j`` for ``instruments = [A_j..A_k]``.

    ``pattern`` lists ``D_{j+1} .. D_k`` as ``"$"`` or ``"I"``.
    """
    if len(pattern) != len(instruments) - 1:
        raise ValidationError("pattern length must be one less than the number of instruments")
    deph = dephasing_channel(s)
    maps = [embed_instrument(instruments[0], s)]
    for d, m in zip(pattern, instruments[1:]):
        if d == "$":
            maps.append(deph)
        elif d != "I":
            raise ValidationError(f"unknown step {d!r}")
        maps.append(embed_instrument(m, s))
    total = compose(*reversed(maps))
    return povm_norm(total) ** 2


def stage_povm_norms(s: Spectrum, instruments: Sequence[KrausMap]) -> dict[int, float]:
    """``j -> max over {I,$} insertions of ||A_{k:...:j}||_p^2`` for j = 1..k."""
    k = len(instruments)
    out = {}
    for j in range(1, k + 1):
        tail = instruments[j - 1:]
        out[j] = max(
            composition_norm(s, tail, p) for p in itertools.product("I$", repeat=len(tail) - 1)
        )
    return out


# --------------------------------------------------------------------------- #
# proof identity
# --------------------------------------------------------------------------- #

def _parse_pattern(pattern: Sequence[str]) -> int:
    pattern = tuple(pattern)
    if not pattern or any(p not in ("P", "$", "I") for p in pattern):
        raise ValidationError(f"pattern entries must be 'P', '$' or 'I', got {pattern}")
    if "P" not in pattern:
        raise ValidationError("pattern needs at least one projector sum")
    j = max(i for i, p in enumerate(pattern) if p == "P")
    if any(p == "I" for p in pattern[:j]):
        raise ValidationError("before the outer projector only 'P' or '$' are allowed")
    if any(p == "P" for p in pattern[j + 1:]):
        raise ValidationError("after the outer projector only '$' or 'I' are allowed")
    if pattern.count("P") > 2:
        raise ValidationError("at most two projector sums are supported")
    return j


def general_term_lhs(s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap], pattern: Sequence[str]) -> float:
    """``sum_{n != m} |tr[A_k D_k ... A_1 S_1 (rho)]|^2`` over every ``P`` slot of ``pattern``."""
    if len(pattern) != len(instruments):
        raise ValidationError("one pattern entry per instrument")
    _parse_pattern(pattern)
    if s.num_levels > 8:
        raise ValidationError(f"explicit summation supports at most 8 levels, got {s.num_levels}")
    stacks = _lift(instruments, s)
    labels = s.labels
    d_h = s.num_levels
    onehot = (labels[None, :] == np.arange(d_h)[:, None]).astype(float)
    masks = onehot[:, None, :, None] * onehot[None, :, None, :]
    off = ~np.eye(d_h, dtype=bool)
    masks = masks[off]  # (pairs, d, d): only n != m
    same = labels[:, None] == labels[None, :]
    x = s.to_eigenbasis(np.asarray(rho, dtype=complex))
    k = len(stacks)
    for l, (op, stack) in enumerate(zip(pattern, stacks)):
        if op == "P":
            x = x[..., None, :, :] * masks
        elif op == "$":
            x = x * same
        if l < k - 1:
            x = _apply_kraus(stack, x)
    c = np.einsum("ji,...ij->...", _povm(stacks[-1]), x)
    return math.fsum((np.abs(c) ** 2).reshape(-1))


def verify_general_term(
    s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap], pattern: Sequence[str]
) -> BoundReport:
    """Check the projector-sum identity for one choice of inserted operations.

    ``pattern[l]`` is the operation applied just before ``instruments[l]``:
    ``"P"`` sums over off-diagonal components, ``"$"`` dephases and ``"I"``
    does nothing.  The right side is the squared POVM norm of the maps from
    the outer projector onward times ``tr[$(sigma)^2]`` for the (unnormalized)
    state ``sigma = A_{j-1}(omega_{j-1})`` reaching it.
    """
    j = _parse_pattern(pattern)
    lhs = general_term_lhs(s, rho, instruments, pattern)
    norm = composition_norm(s, instruments[j:], pattern[j + 1:])
    if j == 0:
        sigma = np.asarray(rho, dtype=complex)
    else:
        omega = intermediate_state(s, rho, instruments[: j - 1])
        sigma = embed_instrument(instruments[j - 1], s).apply(omega)
    tr = float(np.trace(sigma).real)
    purity = 0.0 if tr <= 1e-14 else 1.0 / effective_dimension(sigma, s, renormalize=False)
    rhs = norm * purity
    return BoundReport(
        lhs,
        rhs,
        "general_term",
        digest(rho, *[k for m in instruments for k in m.kraus_ops], s.matrix(), pattern="".join(pattern)),
        {"pattern": "".join(pattern), "povm_norm_sq": norm, "purity": purity},
    )


# --------------------------------------------------------------------------- #
# full instance verification
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class InstanceFactors:
    gs: tuple[float, ...]
    ss: tuple[float, ...]
    n_epsilon: int
    max_gap_degeneracy: int
    deff_min: float
    stage_norms: dict
    renormalized: bool
    skipped_stages: int


def instance_factors(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    tw: TimeWindows,
    epsilon: float,
    full_instruments: Sequence[KrausMap] | None = None,
) -> InstanceFactors:
    census = gap_census(s, epsilon)
    stages = d_eff_stages(s, rho, instruments, full_instruments)
    return InstanceFactors(
        tuple(g_factor(census, t, epsilon) for t in tw.windows),
        tuple(s_factor(s, t) for t in tw.windows),
        census.n_epsilon,
        census.max_gap_degeneracy,
        stages.value,
        stage_povm_norms(s, instruments),
        stages.renormalized,
        stages.skipped,
    )


def finite_time_rhs(f: InstanceFactors, k: int) -> float:
    n = f.stage_norms
    if k == 1:
        return k1_rhs(f.gs[0], n[1], f.deff_min)
    if k == 2:
        return k2_rhs(*f.gs, *f.ss, n[2], n[1], f.deff_min)
    if k == 3:
        return k3_rhs(f.gs, f.ss, (n[3], n[2], n[1]), f.deff_min)
    raise ValidationError(f"no explicit finite-time bound for k={k}")


def infinite_time_inputs(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    full_instruments: Sequence[KrausMap] | None = None,
) -> tuple[list[float], list[float]]:
    """Per-stage squared norms and conservative effective dimensions, j = 0..k-1.

    Stage 0 uses ``$(rho)``.  For later stages the conditioned state
    ``A_j(omega_j)`` is renormalized; with ``full_instruments`` the
    unconditioned state is also tried and the smaller d_eff kept.
    """
    k = len(instruments)
    norms_by_j = stage_povm_norms(s, instruments)
    norms = [norms_by_j[j + 1] for j in range(k)]
    deffs = [effective_dimension(dephase(s, np.asarray(rho, dtype=complex)), s)]
    for j in range(1, k):
        omega = intermediate_state(s, rho, instruments[: j - 1])
        cands = []
        for m in [instruments[j - 1]] + ([full_instruments[j - 1]] if full_instruments else []):
            sigma = embed_instrument(m, s).apply(omega)
            if np.trace(sigma).real > 1e-14:
                cands.append(effective_dimension(sigma, s))
        deffs.append(min(cands) if cands else math.inf)
    return norms, deffs


def verify_instance(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    tw: TimeWindows,
    epsilon: float,
    full_instruments: Sequence[KrausMap] | None = None,
) -> list[BoundReport]:
    """Finite-time, envelope and (for nondegenerate gaps) infinite-time reports."""
    k = len(instruments)
    key = digest(
        s.matrix(), rho, *[op for m in instruments for op in m.kraus_ops], windows=list(tw.windows), epsilon=epsilon
    )
    f = instance_factors(s, rho, instruments, tw, epsilon, full_instruments)
    lhs = analytic_second_moment(s, rho, instruments, tw)
    details = {
        "g": list(f.gs),
        "s": list(f.ss),
        "n_epsilon": f.n_epsilon,
        "max_gap_degeneracy": f.max_gap_degeneracy,
        "deff_min": f.deff_min,
        "renormalized": f.renormalized,
        "skipped_stages": f.skipped_stages,
        "stage_norms": {str(j): v for j, v in f.stage_norms.items()},
    }
    census = gap_census(s, epsilon)
    reports = [
        BoundReport(lhs, finite_time_rhs(f, k), f"finite_time_k{k}", key, details),
        BoundReport(lhs, ck_rhs(census, tw, epsilon, k, f.deff_min), f"envelope_k{k}", key, details),
    ]
    if census.num_levels >= 2 and census.max_gap_degeneracy == 1:
        norms, deffs = infinite_time_inputs(s, rho, instruments, full_instruments)
        lhs_inf = infinite_time_second_moment(s, rho, instruments)
        reports.append(
            BoundReport(lhs_inf, infinite_time_rhs(norms, deffs, k), f"infinite_time_k{k}", key,
                        {"stage_norms": norms, "stage_deffs": deffs})
        )
    return reports
