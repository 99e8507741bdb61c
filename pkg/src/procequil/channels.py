"""CP maps in Kraus and Choi form, and the link product on labelled legs.

Choi convention: for a map from ``H_in`` to ``H_out`` the Choi matrix lives on
``H_out (x) H_in`` (output leg first) and acts as

    A(sigma) = tr_in[(1_out (x) sigma^T) A].

Multi-leg operators (process tensors, testers) carry an ordered tuple of
``(label, dim)`` legs; the matrix row index runs over the legs in that order,
row-major.  The link product contracts legs that share a label and takes the
tensor product on the rest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import LegMismatchError, ValidationError
from .spectral import Spectrum

CP_TOL = 1e-10

Legs = tuple[tuple[str, int], ...]


# --------------------------------------------------------------------------- #
# index-reshuffling primitives
# --------------------------------------------------------------------------- #

def partial_trace(matrix: np.ndarray, dims: Sequence[int], traced: Iterable[int]) -> np.ndarray:
    """Trace out the subsystems at positions ``traced`` of a square operator."""
    dims = list(dims)
    traced = sorted(set(traced))
    n = len(dims)
    t = np.asarray(matrix).reshape(dims + dims)
    rows = list(range(n))
    cols = [i + n if i not in traced else i for i in range(n)]
    keep = [i for i in range(n) if i not in traced]
    out = [i for i in keep] + [i + n for i in keep]
    res = np.einsum(t, rows + cols, out)
    d = int(np.prod([dims[i] for i in keep])) if keep else 1
    return res.reshape(d, d)


def partial_transpose(matrix: np.ndarray, dims: Sequence[int], which: Iterable[int]) -> np.ndarray:
    dims = list(dims)
    n = len(dims)
    t = np.asarray(matrix).reshape(dims + dims)
    perm = list(range(2 * n))
    for i in which:
        perm[i], perm[i + n] = perm[i + n], perm[i]
    d = int(np.prod(dims))
    return t.transpose(perm).reshape(d, d)


# --------------------------------------------------------------------------- #
# Kraus maps
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class KrausMap:
    """A completely positive, trace non-increasing map ``sum_a K_a (.) K_a^dag``."""

    kraus_ops: tuple[np.ndarray, ...]
    dim_in: int = field(default=0)
    dim_out: int = field(default=0)

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
        if not ops:
            raise ValidationError("KrausMap needs at least one operator")
        shape = ops[0].shape
        if any(k.shape != shape or k.ndim != 2 for k in ops):
            raise ValidationError(
                f"Kraus operators have inconsistent shapes: {[k.shape for k in ops]}"
            )
        d_out, d_in = shape
        if (self.dim_in and self.dim_in != d_in) or (self.dim_out and self.dim_out != d_out):
            raise ValidationError(
                f"declared dims ({self.dim_out}<-{self.dim_in}) do not match operators {shape}"
            )
        object.__setattr__(self, "kraus_ops", ops)
        object.__setattr__(self, "dim_in", d_in)
        object.__setattr__(self, "dim_out", d_out)
        top = np.linalg.eigvalsh(self.povm)[-1]
        if top > 1 + CP_TOL:
            raise ValidationError(f"map is trace increasing: largest POVM eigenvalue {top:.12f}")

    @property
    def povm(self) -> np.ndarray:
        return sum(k.conj().T @ k for k in self.kraus_ops)

    @property
    def is_tp(self) -> bool:
        return bool(np.abs(self.povm - np.eye(self.dim_in)).max() <= CP_TOL)

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        sigma = np.asarray(sigma)
        if sigma.shape != (self.dim_in, self.dim_in):
            raise ValidationError(f"input of shape {sigma.shape} for map on dim {self.dim_in}")
        return sum(k @ sigma @ k.conj().T for k in self.kraus_ops)

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        """Heisenberg-picture action ``sum_a K_a^dag x K_a``."""
        return sum(k.conj().T @ x @ k for k in self.kraus_ops)

    def then(self, other: "KrausMap") -> "KrausMap":
        """The composition ``other o self`` (apply ``self`` first)."""
        if other.dim_in != self.dim_out:
            raise ValidationError(f"cannot compose: {self.dim_out} -> {other.dim_in}")
        return KrausMap(tuple(b @ a for b in other.kraus_ops for a in self.kraus_ops))

    def embed(self, env_dim: int) -> "KrausMap":
        """``A (x) 1_E`` with the system factor first."""
        eye = np.eye(env_dim)
        return KrausMap(tuple(np.kron(k, eye) for k in self.kraus_ops))

    def scaled(self, factor: float) -> "KrausMap":
        return KrausMap(tuple(np.sqrt(factor) * k for k in self.kraus_ops))


def compose(*maps: KrausMap) -> KrausMap:
    """Kraus composition ``maps[0] o maps[1] o ... o maps[-1]``."""
    return reduce(lambda acc, m: acc.then(m), reversed(maps[:-1]), maps[-1])


def identity_map(d: int) -> KrausMap:
    return KrausMap((np.eye(d),))


def povm_norm(m: KrausMap) -> float:
    """Largest eigenvalue of the POVM element ``sum_a K_a^dag K_a``."""
    return float(np.linalg.eigvalsh(m.povm)[-1])


# --------------------------------------------------------------------------- #
# Choi matrices on labelled legs
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ChoiMatrix:
    """Matrix on an ordered list of labelled legs.

    ``cp=False`` marks linear maps that are not completely positive (such as
    ``X -> P_n X P_m`` for ``n != m``); positivity is then not asserted.
    """

    matrix: np.ndarray
    legs: Legs
    cp: bool = True

    def __post_init__(self):
        legs = tuple((str(name), int(d)) for name, d in self.legs)
        names = [name for name, _ in legs]
        if len(set(names)) != len(names):
            raise LegMismatchError(f"duplicate leg labels {names}")
        m = np.asarray(self.matrix, dtype=complex)
        size = int(np.prod([d for _, d in legs])) if legs else 1
        if m.shape != (size, size):
            raise LegMismatchError(f"matrix shape {m.shape} does not match legs {legs}")
        object.__setattr__(self, "legs", legs)
        object.__setattr__(self, "matrix", m)

    # leg bookkeeping ---------------------------------------------------- #
    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.legs)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.legs)

    @property
    def dim_out(self) -> int:
        return self.dims[0]

    @property
    def dim_in(self) -> int:
        return self.dims[1]

    def dim(self, label: str) -> int:
        return dict(self.legs)[label]

    def tensor(self) -> np.ndarray:
        return self.matrix.reshape(self.dims + self.dims)

    def relabel(self, mapping: dict[str, str]) -> "ChoiMatrix":
        legs = tuple((mapping.get(name, name), d) for name, d in self.legs)
        return ChoiMatrix(self.matrix, legs, self.cp)

    def reorder(self, labels: Sequence[str]) -> "ChoiMatrix":
        if sorted(labels) != sorted(self.labels):
            raise LegMismatchError(f"cannot reorder {self.labels} into {tuple(labels)}")
        pos = [self.labels.index(name) for name in labels]
        n = len(pos)
        t = self.tensor().transpose(pos + [p + n for p in pos])
        legs = tuple(self.legs[p] for p in pos)
        return ChoiMatrix(t.reshape(self.matrix.shape), legs, self.cp)

    def trace_out(self, labels: Iterable[str]) -> "ChoiMatrix":
        labels = set(labels)
        unknown = labels - set(self.labels)
        if unknown:
            raise LegMismatchError(f"no legs named {sorted(unknown)}")
        idx = [i for i, name in enumerate(self.labels) if name in labels]
        m = partial_trace(self.matrix, self.dims, idx)
        legs = tuple(leg for leg in self.legs if leg[0] not in labels)
        return ChoiMatrix(m, legs, self.cp)

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def is_positive(self, tol: float = CP_TOL) -> bool:
        herm = np.abs(self.matrix - self.matrix.conj().T).max() <= tol * max(1.0, np.abs(self.matrix).max())
        return bool(herm and self.min_eigenvalue() >= -tol)

    def __add__(self, other: "ChoiMatrix") -> "ChoiMatrix":
        other = other.reorder(self.labels) if other.legs != self.legs else other
        if other.legs != self.legs:
            raise LegMismatchError(f"cannot add {self.legs} and {other.legs}")
        return ChoiMatrix(self.matrix + other.matrix, self.legs, self.cp and other.cp)

    def __sub__(self, other: "ChoiMatrix") -> "ChoiMatrix":
        other = other.reorder(self.labels) if other.labels != self.labels else other
        return ChoiMatrix(self.matrix - other.matrix, self.legs, cp=False)

    def to_json(self) -> dict:
        return {
            "legs": [{"name": name, "dim": d} for name, d in self.legs],
            "cp": self.cp,
            "re": self.matrix.real.tolist(),
            "im": self.matrix.imag.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ChoiMatrix":
        try:
            legs = tuple((leg["name"], leg["dim"]) for leg in data["legs"])
            m = np.asarray(data["re"], dtype=float) + 1j * np.asarray(data["im"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed Choi JSON: {exc}") from exc
        return cls(m, legs, bool(data.get("cp", True)))


def state_choi(rho: np.ndarray, legs: Legs) -> ChoiMatrix:
    """A state is the Choi matrix of a preparation (no input leg)."""
    return ChoiMatrix(rho, legs)


def kraus_to_choi(m: KrausMap, out: str = "out", inp: str = "in") -> ChoiMatrix:
    """``sum_a |K_a>><<K_a|`` with ``|K>> = sum_i K|i> (x) |i>``."""
    vecs = np.stack([k.reshape(-1) for k in m.kraus_ops])
    mat = vecs.T @ vecs.conj()
    return ChoiMatrix(mat, ((out, m.dim_out), (inp, m.dim_in)))


def povm_choi(m: KrausMap, inp: str = "in") -> ChoiMatrix:
    """Choi matrix of ``X -> tr[A(X)]``, i.e. the transposed POVM element."""
    return ChoiMatrix(m.povm.T, ((inp, m.dim_in),))


def apply_choi(c: ChoiMatrix, sigma: np.ndarray) -> np.ndarray:
    if len(c.legs) != 2:
        raise LegMismatchError(f"apply_choi needs a two-leg map, got legs {c.legs}")
    d_out, d_in = c.dims
    sigma = np.asarray(sigma)
    if sigma.shape != (d_in, d_in):
        raise ValidationError(f"input of shape {sigma.shape} for map with input dim {d_in}")
    t = c.matrix.reshape(d_out, d_in, d_out, d_in)
    return np.einsum("aibj,ij->ab", t, sigma)


def link_product(a: ChoiMatrix, b: ChoiMatrix) -> ChoiMatrix:
    """Contract legs shared by label; tensor product on the others.

    Entrywise ``(A*B)_{x y, x' y'} = sum_{s s'} A_{x s, x' s'} B_{s y, s' y'}``,
    which is ``tr_s[(1 (x) A^{T_s})(B (x) 1)]``.  Result legs: the free legs of
    ``a`` followed by the free legs of ``b``.
    """
    shared = [name for name in a.labels if name in b.labels]
    for name in shared:
        if a.dim(name) != b.dim(name):
            raise LegMismatchError(
                f"leg {name!r} has dim {a.dim(name)} in one factor and {b.dim(name)} in the other"
            )
    ids: dict[str, tuple[int, int]] = {}
    for name in a.labels + b.labels:
        if name not in ids:
            k = len(ids)
            ids[name] = (2 * k, 2 * k + 1)
    a_sub = [ids[n][0] for n in a.labels] + [ids[n][1] for n in a.labels]
    b_sub = [ids[n][0] for n in b.labels] + [ids[n][1] for n in b.labels]
    free = [leg for leg in a.legs if leg[0] not in shared] + [
        leg for leg in b.legs if leg[0] not in shared
    ]
    out_sub = [ids[n][0] for n, _ in free] + [ids[n][1] for n, _ in free]
    t = np.einsum(a.tensor(), a_sub, b.tensor(), b_sub, out_sub, optimize=True)
    size = int(np.prod([d for _, d in free])) if free else 1
    return ChoiMatrix(t.reshape(size, size), tuple(free), a.cp and b.cp)


def link_chain(*factors: ChoiMatrix) -> ChoiMatrix:
    return reduce(link_product, factors)


# --------------------------------------------------------------------------- #
# channels built from a spectrum
# --------------------------------------------------------------------------- #

def unitary_channel(s: Spectrum, dt: float) -> KrausMap:
    """``exp(-i H dt) (.) exp(i H dt)`` as a single Kraus operator."""
    phases = np.exp(-1j * s.eigenvalues * dt)
    u = (s.basis * phases) @ s.basis.conj().T
    return KrausMap((u,))


def dephasing_channel(s: Spectrum) -> KrausMap:
    """``sum_n P_n (.) P_n`` in the energy eigenbasis."""
    return KrausMap(tuple(s.projectors))


def dephase(s: Spectrum, sigma: np.ndarray) -> np.ndarray:
    """Apply the dephasing map without building Kraus operators."""
    t = s.to_eigenbasis(sigma)
    t = t * (s.labels[:, None] == s.labels[None, :])
    return s.from_eigenbasis(t)


def eigenpair_projection(s: Spectrum, n: int, m: int, out: str = "out", inp: str = "in") -> ChoiMatrix:
    """Choi matrix of the linear map ``X -> P_n X P_m``."""
    if not (0 <= n < s.num_levels and 0 <= m < s.num_levels):
        raise ValidationError(f"level indices ({n}, {m}) out of range for {s.num_levels} levels")
    proj = s.projectors
    vn = proj[n].reshape(-1)
    vm = proj[m].reshape(-1)
    d = s.total_dim
    return ChoiMatrix(np.outer(vn, vm.conj()), ((out, d), (inp, d)), cp=(n == m))
