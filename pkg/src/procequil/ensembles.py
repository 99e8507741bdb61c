"""Random Hamiltonians, states and instruments for ensemble experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channels import KrausMap
from .errors import ValidationError
from .spectral import Hamiltonian, Spectrum, diagonalize, load_hamiltonian

ENSEMBLES = ("gue", "spin_chain", "diagonal_random", "from_file")

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def gue(d: int, rng: np.random.Generator) -> Hamiltonian:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return Hamiltonian((a + a.conj().T) / 2)


def _site_op(op: np.ndarray, site: int, n: int) -> np.ndarray:
    out = np.eye(1)
    for i in range(n):
        out = np.kron(out, op if i == site else np.eye(2))
    return out


def spin_chain(d: int, rng: np.random.Generator, disorder: float = 1.0) -> Hamiltonian:
    """Open Heisenberg chain with random longitudinal fields; ``d`` must be a power of two."""
    n = int(round(math.log2(d))) if d > 0 else 0
    if d < 2 or 2**n != d:
        raise ValidationError(f"spin_chain needs a power-of-two dimension, got {d}")
    h = np.zeros((d, d), dtype=complex)
    for i in range(n - 1):
        for p in PAULI.values():
            h += _site_op(p, i, n) @ _site_op(p, i + 1, n)
    for i in range(n):
        h += rng.uniform(-disorder, disorder) * _site_op(PAULI["z"], i, n)
    return Hamiltonian(h)


def diagonal_random(d: int, rng: np.random.Generator) -> Hamiltonian:
    return Hamiltonian(np.diag(rng.uniform(0.0, 1.0, size=d)))


def make_hamiltonian(name: str, d: int, rng: np.random.Generator, path: str | Path | None = None) -> Hamiltonian:
    if name == "gue":
        return gue(d, rng)
    if name == "spin_chain":
        return spin_chain(d, rng)
    if name == "diagonal_random":
        return diagonal_random(d, rng)
    if name == "from_file":
        if path is None:
            raise ValidationError("from_file ensemble needs a hamiltonian_file")
        h = load_hamiltonian(path)
        if h.dim != d:
            raise ValidationError(f"Hamiltonian file has dim {h.dim}, expected {d}")
        return h
    raise ValidationError(f"unknown ensemble {name!r}; choose from {ENSEMBLES}")


def normalized_spectrum(h: Hamiltonian) -> tuple[Spectrum, float, float]:
    """Spectrum rescaled to ``[0, 1]`` together with the (scale, shift) applied."""
    s = diagonalize(h)
    shift = float(s.energies[0])
    scale = float(s.energies[-1] - s.energies[0])
    if scale <= 0:
        return s.rescaled(1.0, shift), 1.0, shift
    return s.rescaled(scale, shift), scale, shift


def random_state(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = rank or d
    v = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    rho = v @ v.conj().T
    return rho / np.trace(rho).real


def random_isometry(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(d_out, d_in)) + 1j * rng.normal(size=(d_out, d_in))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_instrument(
    d: int, outcomes: int, rng: np.random.Generator, kraus_per_outcome: int = 1, d_out: int | None = None
) -> list[KrausMap]:
    """A trace-preserving instrument split into ``outcomes`` CP maps."""
    d_out = d if d_out is None else d_out
    total = outcomes * kraus_per_outcome
    v = random_isometry(d, total * d_out, rng).reshape(total, d_out, d)
    return [KrausMap(tuple(v[i * kraus_per_outcome:(i + 1) * kraus_per_outcome])) for i in range(outcomes)]


def full_instrument(outcomes: list[KrausMap]) -> KrausMap:
    return KrausMap(tuple(k for m in outcomes for k in m.kraus_ops))


def random_cp_map(d: int, rng: np.random.Generator, kraus: int = 2) -> KrausMap:
    """A trace non-increasing map with POVM norm drawn uniformly in ``(0, 1]``."""
    ops = rng.normal(size=(kraus, d, d)) + 1j * rng.normal(size=(kraus, d, d))
    m = KrausMap(tuple(ops / 10.0))
    top = float(np.linalg.eigvalsh(m.povm)[-1])
    return m.scaled(rng.uniform(0.05, 1.0) / top)


@dataclass(frozen=True)
class Instance:
    spectrum: Spectrum
    rho: np.ndarray
    instruments: tuple[KrausMap, ...]
    full_instruments: tuple[KrausMap, ...]
    d_s: int
    d_e: int
    energy_scale: float
    energy_shift: float

    @property
    def k(self) -> int:
        return len(self.instruments)


def random_instance(
    ensemble: str,
    d_s: int,
    d_e: int,
    k: int,
    rng: np.random.Generator,
    outcomes: int = 2,
    state_rank: int | None = 1,
    hamiltonian_file: str | None = None,
) -> Instance:
    """Normalized Hamiltonian, random state and one outcome of a random instrument per time."""
    h = make_hamiltonian(ensemble, d_s * d_e, rng, hamiltonian_file)
    s, scale, shift = normalized_spectrum(h)
    rho = random_state(d_s * d_e, rng, state_rank)
    chosen, full = [], []
    for _ in range(k):
        inst = random_instrument(d_s, outcomes, rng, kraus_per_outcome=int(rng.integers(1, 3)))
        chosen.append(inst[0])
        full.append(full_instrument(inst))
    return Instance(s, rho, tuple(chosen), tuple(full), d_s, d_e, scale, shift)
