"""Process tensors, testers and the multitime Born rule.

Leg labels follow the circuit picture: ``"{j}i"`` is the system state
arriving at intervention time ``j`` and ``"{j}o"`` is the system state the
instrument hands back.  A k-step process tensor carries the 2k-1 legs

    ("{k}i", "{k-1}o", "{k-1}i", ..., "1o", "1i")

and is built with unnormalized Bell pairs, so its trace is ``d_S**(k-1)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import (
    ChoiMatrix,
    KrausMap,
    dephase,
    dephasing_channel,
    identity_map,
    kraus_to_choi,
    link_chain,
    link_product,
    povm_choi,
    unitary_channel,
)
from .errors import LegMismatchError, ValidationError
from .spectral import Spectrum

STATE_TOL = 1e-10


def process_labels(k: int) -> tuple[str, ...]:
    labels = [f"{k}i"]
    for j in range(k - 1, 0, -1):
        labels += [f"{j}o", f"{j}i"]
    return tuple(labels)


def process_legs(k: int, d_s: int) -> tuple[tuple[str, int], ...]:
    return tuple((name, d_s) for name in process_labels(k))


def check_state(rho: np.ndarray, dim: int, name: str = "rho") -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValidationError(f"{name} has shape {rho.shape}, expected {(dim, dim)}")
    if np.abs(rho - rho.conj().T).max() > STATE_TOL:
        raise ValidationError(f"{name} is not Hermitian")
    if abs(np.trace(rho) - 1) > 1e-9:
        raise ValidationError(f"{name} has trace {np.trace(rho).real:.12f}, expected 1")
    low = np.linalg.eigvalsh(rho)[0]
    if low < -STATE_TOL:
        raise ValidationError(f"{name} is not positive: smallest eigenvalue {low:.3e}")
    return rho


def _env_dim(s: Spectrum, d_s: int) -> int:
    d, rem = divmod(s.total_dim, d_s)
    if rem or d < 1:
        raise ValidationError(f"total dimension {s.total_dim} is not divisible by d_S={d_s}")
    return d


# --------------------------------------------------------------------------- #
# data types
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ProcessTensor:
    choi: ChoiMatrix
    k: int
    sys_dim: int
    env_dim: int
    dts: tuple[float, ...] | None = None
    kind: str = "process"

    def __post_init__(self):
        if self.choi.legs != process_legs(self.k, self.sys_dim):
            raise LegMismatchError(
                f"process tensor legs {self.choi.legs} do not match k={self.k}, d_S={self.sys_dim}"
            )

    @property
    def leg_dims(self) -> tuple[int, ...]:
        return self.choi.dims

    @property
    def matrix(self) -> np.ndarray:
        return self.choi.matrix

    def to_json(self) -> dict:
        return {
            "schema": "process_tensor/1",
            "k": self.k,
            "sys_dim": self.sys_dim,
            "env_dim": self.env_dim,
            "kind": self.kind,
            "dts": list(self.dts) if self.dts is not None else None,
            "choi": self.choi.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProcessTensor":
        if data.get("schema") != "process_tensor/1":
            raise ValidationError(f"unexpected schema {data.get('schema')!r}")
        try:
            choi = ChoiMatrix.from_json(data["choi"])
            dts = data.get("dts")
            return cls(
                choi,
                int(data["k"]),
                int(data["sys_dim"]),
                int(data["env_dim"]),
                tuple(dts) if dts is not None else None,
                data.get("kind", "process"),
            )
        except KeyError as exc:
            raise ValidationError(f"process tensor JSON missing field {exc}") from exc


@dataclass(frozen=True)
class Tester:
    """A multitime instrument as a sum of outcome Choi matrices.

    ``instruments`` optionally records, per outcome label, the sequence of
    single-time CP maps (first time first) that generated a memoryless
    outcome; downstream bounds need them for effective dimensions.
    """

    outcomes: tuple[tuple[tuple, ChoiMatrix], ...]
    k: int
    sys_dim: int
    ancilla_dim: int = 1
    instruments: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        legs = process_legs(self.k, self.sys_dim)
        fixed = []
        for label, choi in self.outcomes:
            if choi.legs != legs:
                choi = choi.reorder(process_labels(self.k))
                if choi.legs != legs:
                    raise LegMismatchError(f"outcome {label} has legs {choi.legs}, expected {legs}")
            fixed.append((tuple(label), choi))
        object.__setattr__(self, "outcomes", tuple(fixed))

    @property
    def choi(self) -> ChoiMatrix:
        total = self.outcomes[0][1].matrix.copy()
        for _, c in self.outcomes[1:]:
            total = total + c.matrix
        return ChoiMatrix(total, self.outcomes[0][1].legs)

    @property
    def num_outcomes(self) -> int:
        return len(self.outcomes)

    def to_json(self) -> dict:
        return {
            "schema": "tester/1",
            "k": self.k,
            "sys_dim": self.sys_dim,
            "ancilla_dim": self.ancilla_dim,
            "outcomes": [{"label": list(lab), "choi": c.to_json()} for lab, c in self.outcomes],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Tester":
        if data.get("schema") != "tester/1":
            raise ValidationError(f"unexpected schema {data.get('schema')!r}")
        try:
            outcomes = tuple(
                (tuple(o["label"]), ChoiMatrix.from_json(o["choi"])) for o in data["outcomes"]
            )
            return cls(outcomes, int(data["k"]), int(data["sys_dim"]), int(data.get("ancilla_dim", 1)))
        except KeyError as exc:
            raise ValidationError(f"tester JSON missing field {exc}") from exc


@dataclass(frozen=True)
class InstrumentSet:
    testers: tuple[Tester, ...]

    def __post_init__(self):
        object.__setattr__(self, "testers", tuple(self.testers))
        if not self.testers:
            raise ValidationError("instrument set is empty")

    @property
    def total_outcomes(self) -> int:
        return sum(t.num_outcomes for t in self.testers)

    def __iter__(self):
        return iter(self.testers)

    def __len__(self):
        return len(self.testers)


# --------------------------------------------------------------------------- #
# assembly
# --------------------------------------------------------------------------- #

def _system_env_choi(kmap: KrausMap, out: tuple[str, str], inp: tuple[str, str], d_s: int, d_e: int) -> ChoiMatrix:
    c = kraus_to_choi(kmap)
    legs = ((out[0], d_s), (out[1], d_e), (inp[0], d_s), (inp[1], d_e))
    return ChoiMatrix(c.matrix, legs)


def _assemble(step_maps: Sequence[KrausMap], rho: np.ndarray, d_s: int, d_e: int) -> ChoiMatrix:
    x = ChoiMatrix(rho, (("s0", d_s), ("e0", d_e)))
    for j, kmap in enumerate(step_maps, start=1):
        prev_s = "s0" if j == 1 else f"{j - 1}o"
        step = _system_env_choi(kmap, (f"{j}i", f"e{j}"), (prev_s, f"e{j - 1}"), d_s, d_e)
        x = link_product(step, x)
    k = len(step_maps)
    return x.trace_out([f"e{k}"]).reorder(process_labels(k))


def build_process(s: Spectrum, rho: np.ndarray, dts: Sequence[float], d_s: int, d_e: int | None = None) -> ProcessTensor:
    """``tr_E[U_k * ... * U_1 * rho]`` for evolution times ``dts``."""
    d_e = _env_dim(s, d_s) if d_e is None else d_e
    if d_s * d_e != s.total_dim:
        raise ValidationError(f"d_S*d_E = {d_s * d_e} but the Hamiltonian has dim {s.total_dim}")
    if len(dts) < 1:
        raise ValidationError("need at least one evolution interval")
    rho = check_state(rho, s.total_dim)
    maps = [unitary_channel(s, float(dt)) for dt in dts]
    choi = _assemble(maps, rho, d_s, d_e)
    return ProcessTensor(choi, len(dts), d_s, d_e, tuple(float(t) for t in dts), "process")


def build_equilibrium(s: Spectrum, rho: np.ndarray, k: int, d_s: int, d_e: int | None = None) -> ProcessTensor:
    """The process with every unitary step replaced by energy dephasing."""
    d_e = _env_dim(s, d_s) if d_e is None else d_e
    if d_s * d_e != s.total_dim:
        raise ValidationError(f"d_S*d_E = {d_s * d_e} but the Hamiltonian has dim {s.total_dim}")
    if k < 1:
        raise ValidationError("k must be at least 1")
    rho = check_state(rho, s.total_dim)
    deph = dephasing_channel(s)
    choi = _assemble([deph] * k, rho, d_s, d_e)
    return ProcessTensor(choi, k, d_s, d_e, None, "equilibrium")


def causality_residual(p: ProcessTensor) -> float:
    """Worst violation of ``tr_{j^i} X_j = 1_{(j-1)^o} (x) X_{j-1}`` down the chain."""
    x = p.choi
    worst = 0.0
    d_s = p.sys_dim
    for j in range(p.k, 0, -1):
        t = x.trace_out([f"{j}i"])
        if j == 1:
            worst = max(worst, abs(t.matrix[0, 0] - 1.0))
            break
        reduced = t.trace_out([f"{j - 1}o"])
        reduced = ChoiMatrix(reduced.matrix / d_s, reduced.legs)
        expected = link_product(ChoiMatrix(np.eye(d_s), ((f"{j - 1}o", d_s),)), reduced)
        expected = expected.reorder(t.labels)
        worst = max(worst, float(np.abs(t.matrix - expected.matrix).max()))
        x = reduced
    return worst


def marginal_process(p: ProcessTensor) -> ProcessTensor:
    """The (k-1)-step process obtained by discarding the last intervention."""
    if p.k < 2:
        raise ValidationError("a one-step process has no smaller marginal")
    t = p.choi.trace_out([f"{p.k}i", f"{p.k - 1}o"])
    t = ChoiMatrix(t.matrix / p.sys_dim, t.legs)
    dts = p.dts[:-1] if p.dts is not None else None
    return ProcessTensor(t, p.k - 1, p.sys_dim, p.env_dim, dts, p.kind)


# --------------------------------------------------------------------------- #
# testers
# --------------------------------------------------------------------------- #

def build_tester(
    steps: Sequence[Sequence[KrausMap]],
    d_s: int,
    ancilla_state: np.ndarray | None = None,
    labels: Sequence[Sequence] | None = None,
) -> Tester:
    """Tester from per-time instruments acting on ``S (x) W``.

    ``steps[j]`` lists the outcome CP maps available at time ``j+1``; each acts
    from ``S (x) W_j`` to ``S (x) W_{j+1}`` (system factor first).  The memory
    starts in ``ancilla_state`` and everything is discarded after the last
    time.  Outcome labels are tuples of per-time outcome indices unless
    ``labels`` names them.
    """
    k = len(steps)
    if k < 1:
        raise ValidationError("a tester needs at least one time step")
    tau = np.ones((1, 1)) if ancilla_state is None else np.asarray(ancilla_state, dtype=complex)
    w = tau.shape[0]
    w_dims = [w]
    for j, outcomes in enumerate(steps):
        if not outcomes:
            raise ValidationError(f"time step {j + 1} has no outcomes")
        for m in outcomes:
            w_in, r_in = divmod(m.dim_in, d_s)
            if r_in or w_in != w_dims[j]:
                raise ValidationError(
                    f"step {j + 1} map has input dim {m.dim_in}, expected {d_s}x{w_dims[j]}"
                )
        w_out, r_out = divmod(outcomes[0].dim_out, d_s)
        if j < k - 1 and (r_out or any(m.dim_out != outcomes[0].dim_out for m in outcomes)):
            raise ValidationError(f"step {j + 1} outcomes disagree on output dimension")
        w_dims.append(w_out if not r_out else 0)

    per_step = []
    for j, outcomes in enumerate(steps, start=1):
        chois = []
        for m in outcomes:
            if j == k:
                c = povm_choi(m)
                chois.append(ChoiMatrix(c.matrix, ((f"{j}i", d_s), (f"w{j - 1}", w_dims[j - 1]))))
            else:
                c = kraus_to_choi(m)
                legs = (
                    (f"{j}o", d_s), (f"w{j}", w_dims[j]),
                    (f"{j}i", d_s), (f"w{j - 1}", w_dims[j - 1]),
                )
                chois.append(ChoiMatrix(c.matrix, legs))
        per_step.append(chois)

    start = ChoiMatrix(tau, (("w0", w),))
    memoryless = all(wd == 1 for wd in w_dims[:-1])
    outcomes = []
    record = {} if memoryless else None
    index_sets = [range(len(o)) for o in steps]
    for idx in itertools.product(*index_sets):
        c = link_chain(start, *[per_step[j][i] for j, i in enumerate(idx)])
        c = c.reorder(process_labels(k))
        label = tuple(labels[j][i] for j, i in enumerate(idx)) if labels else idx
        outcomes.append((label, c))
        if record is not None:
            record[label] = tuple(steps[j][i] for j, i in enumerate(idx))
    return Tester(tuple(outcomes), k, d_s, max(w_dims[:-1]), record)


def product_tester(steps: Sequence[Sequence[KrausMap]], d_s: int) -> Tester:
    return build_tester(steps, d_s)


# --------------------------------------------------------------------------- #
# statistics
# --------------------------------------------------------------------------- #

def expectation(p: ProcessTensor, t: Tester | ChoiMatrix) -> complex:
    """Multitime Born rule ``tr[Upsilon A^T]``."""
    a = t.choi if isinstance(t, Tester) else t
    if a.labels != p.choi.labels:
        a = a.reorder(p.choi.labels)
    if a.legs != p.choi.legs:
        raise LegMismatchError(f"tester legs {a.legs} do not match process legs {p.choi.legs}")
    return complex(np.sum(p.choi.matrix * a.matrix))


def outcome_probabilities(p: ProcessTensor, t: Tester) -> np.ndarray:
    return np.array([expectation(p, c).real for _, c in t.outcomes])


def _sequential(s: Spectrum, rho, instruments, steps, d_s: int, ancilla_state=None) -> complex:
    """Evolve ``rho (x) tau`` through ``steps[j]`` then ``instruments[j]``; return the trace."""
    d = s.total_dim
    d_e = _env_dim(s, d_s)
    tau = np.ones((1, 1)) if ancilla_state is None else np.asarray(ancilla_state, dtype=complex)
    w = tau.shape[0]
    state = np.kron(np.asarray(rho, dtype=complex), tau)
    for step, inst in zip(steps, instruments):
        state = step(state, w)
        w_in, r = divmod(inst.dim_in, d_s)
        if r or w_in != w:
            raise ValidationError(f"instrument input dim {inst.dim_in} does not match S(x)W = {d_s}x{w}")
        w_out = inst.dim_out // d_s
        r6 = state.reshape(d_s, d_e, w, d_s, d_e, w)
        acc = np.zeros((d_s, d_e, w_out, d_s, d_e, w_out), dtype=complex)
        for kop in inst.kraus_ops:
            kt = kop.reshape(d_s, w_out, d_s, w)
            acc += np.einsum("swSW,SeWTfV,tvTV->sewtfv", kt, r6, kt.conj(), optimize=True)
        w = w_out
        state = acc.reshape(d * w, d * w)
    return complex(np.trace(state))


def sequential_expectation_oracle(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    dts: Sequence[float],
    d_s: int,
    ancilla_state: np.ndarray | None = None,
) -> complex:
    """``tr[A_k U_k ... A_1 U_1 (rho)]`` by direct matrix evolution.

    Instruments act on ``S (x) W`` with ``W`` an optional memory register
    initialised to ``ancilla_state``; the environment is untouched by them.
    """
    if len(instruments) != len(dts):
        raise ValidationError(f"{len(instruments)} instruments but {len(dts)} intervals")

    def unitary_step(dt):
        u = unitary_channel(s, dt).kraus_ops[0]

        def step(state, w):
            uw = np.kron(u, np.eye(w))
            return uw @ state @ uw.conj().T

        return step

    return _sequential(s, rho, instruments, [unitary_step(float(t)) for t in dts], d_s, ancilla_state)


def equilibrium_expectation_oracle(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    d_s: int,
    ancilla_state: np.ndarray | None = None,
) -> complex:
    """Same chain as the sequential oracle with each evolution replaced by dephasing."""
    projs = s.projectors

    def step(state, w):
        eye = np.eye(w)
        return sum(np.kron(p, eye) @ state @ np.kron(p, eye) for p in projs)

    return _sequential(s, rho, instruments, [step] * len(instruments), d_s, ancilla_state)


# --------------------------------------------------------------------------- #
# intermediate states and effective dimensions
# --------------------------------------------------------------------------- #

def embed_instrument(m: KrausMap, s: Spectrum) -> KrausMap:
    env = _env_dim(s, m.dim_in)
    return m.embed(env) if env > 1 else m


def intermediate_state(s: Spectrum, rho: np.ndarray, instruments: Sequence[KrausMap]) -> np.ndarray:
    """``omega_j = $ A_{j-1} $ ... A_1 $ (rho)`` for ``instruments = [A_1, ..., A_{j-1}]``."""
    omega = dephase(s, np.asarray(rho, dtype=complex))
    for m in instruments:
        omega = dephase(s, embed_instrument(m, s).apply(omega))
    return omega


def effective_dimension(sigma: np.ndarray, s: Spectrum, renormalize: bool = True) -> float:
    """``1 / tr[$(sigma)^2]``; a sub-normalized ``sigma`` is rescaled to unit trace first."""
    sigma = np.asarray(sigma, dtype=complex)
    tr = float(np.trace(sigma).real)
    if tr <= 1e-14:
        raise ValidationError("effective dimension of a zero-trace operator is undefined")
    t = s.to_eigenbasis(sigma)
    block = np.abs(t) ** 2 * (s.labels[:, None] == s.labels[None, :])
    purity = float(block.sum())
    if renormalize:
        purity /= tr * tr
    return 1.0 / purity


@dataclass(frozen=True)
class StageReport:
    value: float
    num_states: int
    skipped: int
    renormalized: bool


def stage_states(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    full_instruments: Sequence[KrausMap] | None = None,
) -> list[np.ndarray]:
    """Every state reachable by ``A_j D_j ... A_1 D_1 (rho)`` with ``D in {1, $}``, j <= k-1.

    With ``full_instruments`` the unconditioned (summed) instrument is also
    tried at each step.
    """
    rho = np.asarray(rho, dtype=complex)
    layer = [rho, dephase(s, rho)]
    states = list(layer)
    for j, m in enumerate(instruments[:-1]):
        options = [embed_instrument(m, s)]
        if full_instruments is not None:
            options.append(embed_instrument(full_instruments[j], s))
        nxt = []
        for sigma in layer:
            for src in (sigma, dephase(s, sigma)):
                for op in options:
                    nxt.append(op.apply(src))
        layer = nxt
        states.extend(layer)
    return states


def d_eff_stages(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    full_instruments: Sequence[KrausMap] | None = None,
) -> StageReport:
    values = []
    skipped = 0
    renorm = False
    for sigma in stage_states(s, rho, instruments, full_instruments):
        tr = float(np.trace(sigma).real)
        if tr <= 1e-14:
            skipped += 1
            continue
        renorm = renorm or abs(tr - 1) > 1e-12
        values.append(effective_dimension(sigma, s))
    if not values:
        raise ValidationError("every stage state has zero trace")
    return StageReport(min(values), len(values), skipped, renorm)


def d_eff_min(
    s: Spectrum,
    rho: np.ndarray,
    instruments: Sequence[KrausMap],
    full_instruments: Sequence[KrausMap] | None = None,
) -> float:
    """Smallest effective dimension over the stage states of both processes."""
    return d_eff_stages(s, rho, instruments, full_instruments).value


def identity_instruments(d_s: int, k: int) -> list[KrausMap]:
    return [identity_map(d_s)] * k
