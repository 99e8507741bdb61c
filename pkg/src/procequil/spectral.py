"""Exact diagonalization of finite Hamiltonians and energy-gap statistics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class Hamiltonian:
    """A dense Hermitian matrix on a d-dimensional Hilbert space."""

    matrix: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError(f"Hamiltonian must be square, got shape {m.shape}")
        scale = max(float(np.abs(m).max()), 1.0) if m.size else 1.0
        asym = float(np.abs(m - m.conj().T).max()) if m.size else 0.0
        if asym > HERMITIAN_TOL * scale:
            raise ValidationError(
                f"Hamiltonian is not Hermitian: max |H - H^dag| = {asym:.3e}"
            )
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", m.shape[0])

    def to_json(self) -> dict:
        return {"dim": self.dim, "re": self.matrix.real.tolist(), "im": self.matrix.imag.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Hamiltonian":
        try:
            re = np.asarray(data["re"], dtype=float)
            im = np.asarray(data.get("im", np.zeros_like(re)), dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed Hamiltonian JSON: {exc}") from exc
        if "dim" in data and re.shape != (data["dim"], data["dim"]):
            raise ValidationError(f"declared dim {data['dim']} does not match matrix shape {re.shape}")
        return cls(re + 1j * im)


def load_hamiltonian(path: str | Path) -> Hamiltonian:
    with open(path) as fh:
        return Hamiltonian.from_json(json.load(fh))


@dataclass(frozen=True)
class Spectrum:
    """Clustered eigendecomposition ``H = sum_n E_n P_n``.

    ``basis`` holds orthonormal eigenvectors as columns, grouped so that
    ``labels[a]`` is the level index of column ``a``.  The projectors are
    derived from these.
    """

    energies: np.ndarray
    basis: np.ndarray
    labels: np.ndarray
    degeneracy_tol: float

    @property
    def total_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.energies)

    @property
    def projectors(self) -> list[np.ndarray]:
        out = []
        for n in range(self.num_levels):
            v = self.basis[:, self.labels == n]
            out.append(v @ v.conj().T)
        return out

    @property
    def multiplicities(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_levels)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Per-column energies (length d, repeated for degenerate levels)."""
        return self.energies[self.labels]

    def matrix(self) -> np.ndarray:
        v = self.basis
        return (v * self.eigenvalues) @ v.conj().T

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.basis.conj().T @ op @ self.basis

    def from_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        return self.basis @ op @ self.basis.conj().T

    def rescaled(self, scale: float, shift: float = 0.0) -> "Spectrum":
        """Spectrum of ``(H - shift) / scale`` with the same eigenvectors."""
        return Spectrum(
            (self.energies - shift) / scale, self.basis, self.labels, self.degeneracy_tol / scale
        )


def _cluster(values: np.ndarray, tol: float) -> np.ndarray:
    """Single-linkage labels for sorted ``values``."""
    labels = np.zeros(len(values), dtype=int)
    if len(values) > 1:
        labels[1:] = np.cumsum(np.diff(values) > tol)
    return labels


def diagonalize(h: Hamiltonian | np.ndarray, degeneracy_tol: float | None = None) -> Spectrum:
    """Diagonalize ``h`` and merge numerically degenerate eigenvalues.

    Eigenvalues closer than ``degeneracy_tol`` along the sorted list are
    chained into one level (single linkage).  The default tolerance is
    ``1e-9`` times the spectral range (or ``1e-9`` for a flat spectrum).
    """
    if not isinstance(h, Hamiltonian):
        h = Hamiltonian(h)
    evals, evecs = np.linalg.eigh(h.matrix)
    spread = float(evals[-1] - evals[0]) if len(evals) else 0.0
    if degeneracy_tol is None:
        degeneracy_tol = 1e-9 * spread if spread > 0 else 1e-9
    if degeneracy_tol <= 0:
        raise ValidationError("degeneracy_tol must be positive")
    labels = _cluster(evals, degeneracy_tol)
    n_levels = labels[-1] + 1 if len(labels) else 0
    energies = np.array([evals[labels == n].mean() for n in range(n_levels)])
    spec = Spectrum(energies, evecs, labels, float(degeneracy_tol))
    resid = np.abs(spec.matrix() - h.matrix).max() if h.dim else 0.0
    norm = max(np.abs(evals).max() if len(evals) else 0.0, 1.0)
    if resid > 1e-9 * norm + degeneracy_tol * h.dim:
        raise ValidationError(f"eigendecomposition residual {resid:.3e} too large")
    return spec


@dataclass(frozen=True)
class GapCensus:
    epsilon: float
    n_epsilon: int
    max_gap_degeneracy: int
    min_gap: float
    num_levels: int
    degenerate: bool = False


def ordered_gaps(energies: np.ndarray) -> np.ndarray:
    """All ``E_m - E_n`` for ordered pairs ``m != n``, sorted."""
    e = np.asarray(energies, dtype=float)
    diff = e[:, None] - e[None, :]
    return np.sort(diff[~np.eye(len(e), dtype=bool)])


def max_window_count(gaps: np.ndarray, epsilon: float, tol: float = 0.0) -> int:
    """Largest number of sorted ``gaps`` inside any closed window of width ``epsilon``.

    A maximal window can always be slid right until its left edge hits a
    gap, so anchoring at each gap value is exhaustive.
    """
    if len(gaps) == 0:
        return 0
    lo = np.searchsorted(gaps, gaps - tol, side="left")
    hi = np.searchsorted(gaps, gaps + epsilon + tol, side="right")
    return int((hi - lo).max())


def gap_census(s: Spectrum, epsilon: float) -> GapCensus:
    """Count energy gaps falling into windows of width ``epsilon``."""
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    if s.num_levels < 2:
        return GapCensus(float(epsilon), 0, 0, 0.0, s.num_levels, degenerate=True)
    gaps = ordered_gaps(s.energies)
    tol = s.degeneracy_tol
    return GapCensus(
        epsilon=float(epsilon),
        n_epsilon=max_window_count(gaps, epsilon, tol),
        max_gap_degeneracy=max_window_count(gaps, 0.0, tol),
        min_gap=float(np.diff(s.energies).min()),
        num_levels=s.num_levels,
    )


def mean_positive_gap(s: Spectrum) -> float:
    gaps = ordered_gaps(s.energies)
    pos = gaps[gaps > 0]
    return float(pos.mean()) if len(pos) else 0.0
