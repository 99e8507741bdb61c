"""Distances between processes over finite instrument sets, and classicality checks."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import KrausMap, identity_map
from .errors import LegMismatchError, ValidationError
from .process import (
    InstrumentSet,
    ProcessTensor,
    Tester,
    build_equilibrium,
    build_process,
    build_tester,
)
from .spectral import Spectrum
from .timeavg import TimeWindows


@dataclass(frozen=True)
class CandidateSet:
    processes: tuple[ProcessTensor, ...]
    label: str = "candidates"

    def __post_init__(self):
        procs = tuple(self.processes)
        if not procs:
            raise ValidationError("candidate set is empty")
        legs = procs[0].choi.legs
        if any(p.choi.legs != legs for p in procs):
            raise LegMismatchError("candidate processes do not share a leg structure")
        object.__setattr__(self, "processes", procs)


def _outcome_stack(t: Tester) -> np.ndarray:
    return np.stack([c.matrix for _, c in t.outcomes])


def _check_legs(p: ProcessTensor, q: ProcessTensor, testers: Sequence[Tester]) -> None:
    if p.choi.legs != q.choi.legs:
        raise LegMismatchError(f"process legs differ: {p.choi.legs} vs {q.choi.legs}")
    for t in testers:
        if t.outcomes[0][1].legs != p.choi.legs:
            raise LegMismatchError(f"tester legs {t.outcomes[0][1].legs} do not match {p.choi.legs}")


def tester_distances(p: ProcessTensor, q: ProcessTensor, testers: InstrumentSet | Sequence[Tester]) -> np.ndarray:
    """Half the total variation between outcome distributions, per tester."""
    testers = list(testers)
    if not testers:
        raise ValidationError("instrument set is empty")
    _check_legs(p, q, testers)
    diff = p.matrix - q.matrix
    return np.array(
        [0.5 * np.abs(np.einsum("xij,ij->x", _outcome_stack(t), diff)).sum() for t in testers]
    )


def operational_diamond(p: ProcessTensor, q: ProcessTensor, testers: InstrumentSet | Sequence[Tester]) -> float:
    """Largest total-variation distinguishability of ``p`` and ``q`` over the testers."""
    return float(tester_distances(p, q, testers).max())


@dataclass(frozen=True)
class GeometricResult:
    value: float
    index: int


def geometric_measure(p: ProcessTensor, k_set: CandidateSet, m_set: InstrumentSet) -> GeometricResult:
    """Distance from ``p`` to the closest candidate, and which candidate attains it."""
    values = [operational_diamond(p, c, m_set) for c in k_set.processes]
    i = int(np.argmin(values))
    return GeometricResult(float(values[i]), i)


# --------------------------------------------------------------------------- #
# tester library
# --------------------------------------------------------------------------- #

def basis_measurement(basis: np.ndarray) -> list[KrausMap]:
    """Measure-and-reprepare outcomes ``|b><b|`` for the columns of ``basis``."""
    basis = np.asarray(basis, dtype=complex)
    return [KrausMap((np.outer(basis[:, b], basis[:, b].conj()),)) for b in range(basis.shape[1])]


def check_basis(basis: np.ndarray, d_s: int) -> np.ndarray:
    basis = np.asarray(basis, dtype=complex)
    if basis.shape != (d_s, d_s):
        raise ValidationError(f"basis has shape {basis.shape}, expected {(d_s, d_s)}")
    if np.abs(basis.conj().T @ basis - np.eye(d_s)).max() > 1e-10:
        raise ValidationError("basis is not orthonormal")
    return basis


def projective_tester(bases: Sequence[np.ndarray], d_s: int) -> Tester:
    """Product tester measuring in ``bases[j]`` at time ``j + 1``."""
    steps = [basis_measurement(check_basis(b, d_s)) for b in bases]
    return build_tester(steps, d_s)


def feedforward_steps(bases: Sequence[tuple[np.ndarray, np.ndarray]], d_s: int) -> tuple[list, np.ndarray]:
    """Per-time outcome maps on ``S (x) W`` and the initial bit for :func:`feedforward_tester`."""
    steps = []
    for pair in bases:
        b0, b1 = (check_basis(b, d_s) for b in pair)
        outcomes = []
        for b in range(d_s):
            ops = []
            for w, basis in enumerate((b0, b1)):
                proj = np.outer(basis[:, b], basis[:, b].conj())
                flip = np.zeros((2, 2))
                flip[w ^ (b % 2), w] = 1.0
                ops.append(np.kron(proj, flip))
            outcomes.append(KrausMap(tuple(ops)))
        steps.append(outcomes)
    return steps, np.diag([1.0, 0.0]).astype(complex)


def feedforward_tester(bases: Sequence[tuple[np.ndarray, np.ndarray]], d_s: int) -> Tester:
    """Classical memory of one bit: the bit picks the basis, the outcome parity flips it.

    ``bases[j]`` holds the two candidate bases for time ``j + 1``; the bit
    starts at zero.
    """
    steps, tau = feedforward_steps(bases, d_s)
    return build_tester(steps, d_s, tau)


def bell_basis(d: int) -> np.ndarray:
    """Columns ``(X^a Z^b (x) 1)|Phi+>`` for ``a, b < d``, normalized."""
    omega = np.exp(2j * np.pi / d)
    phi = np.eye(d).reshape(-1) / math.sqrt(d)
    cols = []
    for a in range(d):
        for b in range(d):
            x = np.roll(np.eye(d), a, axis=0)
            z = np.diag(omega ** (b * np.arange(d)))
            cols.append(np.kron(x @ z, np.eye(d)) @ phi)
    return np.stack(cols, axis=1)


def entangled_in_time_steps(k: int, d_s: int) -> tuple[list, np.ndarray | None]:
    """Per-time maps and memory state for :func:`entangled_in_time_tester`."""
    if k == 1:
        return [basis_measurement(np.eye(d_s))], None
    swap = np.zeros((d_s * d_s, d_s * d_s))
    for i in range(d_s):
        for j in range(d_s):
            swap[j * d_s + i, i * d_s + j] = 1.0
    steps = [[KrausMap((swap,))]]
    for _ in range(k - 2):
        steps.append([identity_map(d_s * d_s)])
    bell = bell_basis(d_s)
    steps.append([KrausMap((np.outer(bell[:, x], bell[:, x].conj()),)) for x in range(d_s * d_s)])
    tau = np.zeros((d_s, d_s), dtype=complex)
    tau[0, 0] = 1.0
    return steps, tau


def entangled_in_time_tester(k: int, d_s: int) -> Tester:
    """Swap the system into memory at the first time, pass through, Bell-measure at the last.

    For ``k = 1`` this is a plain computational-basis measurement.
    """
    steps, tau = entangled_in_time_steps(k, d_s)
    return build_tester(steps, d_s, tau)


def random_basis(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def projective_library(k: int, d_s: int, rng: np.random.Generator | None = None, random_testers: int = 1) -> InstrumentSet:
    """Computational-basis tester plus ``random_testers`` product testers in random bases."""
    testers = [projective_tester([np.eye(d_s)] * k, d_s)]
    if random_testers and rng is None:
        raise ValidationError("random testers need a generator")
    for _ in range(random_testers):
        testers.append(projective_tester([random_basis(d_s, rng) for _ in range(k)], d_s))
    return InstrumentSet(tuple(testers))


def memory_library(k: int, d_s: int, rng: np.random.Generator) -> InstrumentSet:
    """Projective, feedforward and entangled-in-time testers together."""
    testers = list(projective_library(k, d_s, rng).testers)
    testers.append(feedforward_tester([(np.eye(d_s), random_basis(d_s, rng)) for _ in range(k)], d_s))
    testers.append(entangled_in_time_tester(k, d_s))
    return InstrumentSet(tuple(testers))


# --------------------------------------------------------------------------- #
# classicality
# --------------------------------------------------------------------------- #

def _marginal_pair(bases: Sequence[np.ndarray], i: int, d_s: int) -> tuple[Tester, Tester]:
    """Testers that measure every time except ``i``, where one dephases and the other does nothing."""
    forgot, skipped = [], []
    for j, b in enumerate(bases):
        meas = basis_measurement(b)
        if j == i:
            forgot.append([KrausMap(tuple(m.kraus_ops[0] for m in meas))])
            skipped.append([identity_map(d_s)])
        else:
            forgot.append(meas)
            skipped.append(meas)
    return build_tester(forgot, d_s), build_tester(skipped, d_s)


def classicality_defect(p: ProcessTensor, bases: Sequence[np.ndarray]) -> float:
    """Worst Kolmogorov inconsistency under single-time marginalization.

    For each time ``i`` compare the joint distribution of the other outcomes
    when time ``i`` is measured and forgotten (dephasing in its basis) with
    the one where nothing is done at time ``i``.
    """
    if len(bases) != p.k:
        raise ValidationError(f"{len(bases)} bases for a {p.k}-step process")
    bases = [check_basis(b, p.sys_dim) for b in bases]
    worst = 0.0
    for i in range(p.k):
        a, c = _marginal_pair(bases, i, p.sys_dim)
        pa = np.einsum("xij,ij->x", _outcome_stack(a), p.matrix).real
        pc = np.einsum("xij,ij->x", _outcome_stack(c), p.matrix).real
        worst = max(worst, float(np.abs(pa - pc).max()))
    return worst


def induced_instrument_set(bases: Sequence[np.ndarray], d_s: int) -> InstrumentSet:
    """Every tester :func:`classicality_defect` uses."""
    bases = [check_basis(b, d_s) for b in bases]
    return InstrumentSet(tuple(t for i in range(len(bases)) for t in _marginal_pair(bases, i, d_s)))


# --------------------------------------------------------------------------- #
# time-averaged distance
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    samples: int


BLOCK = 64


def _block_values(s, rho, testers, tw, d_s, omega, seed, block, count):
    rng = np.random.Generator(np.random.Philox(seed).jumped(block))
    dts = rng.uniform(0.0, 1.0, size=(count, tw.k)) * np.asarray(tw.windows)
    return [operational_diamond(build_process(s, rho, row, d_s), omega, testers) for row in dts]


def time_averaged_distance(
    s: Spectrum,
    rho: np.ndarray,
    testers: InstrumentSet,
    tw: TimeWindows,
    samples: int,
    seed: int,
    d_s: int,
    workers: int = 1,
) -> MonteCarloEstimate:
    """Monte Carlo mean of the operational distance between the process and its equilibrium.

    Samples are drawn in fixed blocks, each from its own jumped Philox
    stream, so the estimate depends only on ``(seed, samples)``.
    """
    if samples < 1:
        raise ValidationError("samples must be at least 1")
    if not tw.finite:
        raise ValidationError("Monte Carlo averaging needs finite windows")
    omega = build_equilibrium(s, rho, tw.k, d_s)
    blocks = [(b, min(BLOCK, samples - b * BLOCK)) for b in range(math.ceil(samples / BLOCK))]
    args = [(s, rho, testers, tw, d_s, omega, seed, b, n) for b, n in blocks]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(lambda a: _block_values(*a), args))
    else:
        chunks = [_block_values(*a) for a in args]
    values = np.array([v for chunk in chunks for v in chunk])
    stderr = float(values.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return MonteCarloEstimate(math.fsum(values) / samples, stderr, samples)
