"""Regenerate ``data/frozen_oracles.json`` from the brute-force references.

Run from the repository root: ``python3 tests/freeze_oracles.py``.  Inputs are
drawn once from a fixed seed and stored next to the expected values, so the
tests never depend on how the package consumes random numbers.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

import oracles

OUT = Path(__file__).parent / "data" / "frozen_oracles.json"


def enc(m):
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def rand_herm(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def rand_state(d, rng, rank):
    v = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    r = v @ v.conj().T
    return r / np.trace(r).real


def rand_outcome(d, rng, outcomes=2):
    """First outcome of a random TP instrument, as a Kraus list."""
    z = rng.normal(size=(outcomes * d, d)) + 1j * rng.normal(size=(outcomes * d, d))
    q, _ = np.linalg.qr(z)
    return [q[:d, :]]


def main():
    rng = np.random.default_rng(20241014)
    data = {}

    data["gap_counts"] = []
    for energies, eps in [([0, 1, 2, 3], 0.5), ([0, 1], 0.7), ([0, 1, 2], 1.5)]:
        data["gap_counts"].append({"energies": energies, "eps": eps,
                                   "n": oracles.gap_count_bruteforce(energies, eps)})
    e7 = np.sort(rng.uniform(0, 1, size=7)).tolist()
    for eps in (0.01, 0.05, 0.2, 0.6):
        data["gap_counts"].append({"energies": e7, "eps": eps, "n": oracles.gap_count_bruteforce(e7, eps)})

    ops = [0.15 * (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))) for _ in range(2)]
    povm = sum(k.conj().T @ k for k in ops)
    data["povm_norm"] = {"kraus": [enc(k) for k in ops], "value": oracles.power_iteration_top(povm)}

    f = lambda x: np.exp(-1j * 1.3 * x)
    avg = oracles.trapezoid_average(f, 2.7, 10_000)
    data["phase_average"] = {"delta": 1.3, "t": 2.7, "re": avg.real, "im": avg.imag}

    # k = 1 moment on a qubit system with a qubit environment
    h = rand_herm(4, rng)
    w = np.linalg.eigvalsh(h)
    h = (h - w[0] * np.eye(4)) / (w[-1] - w[0])
    rho = rand_state(4, rng, 1)
    a1 = rand_outcome(2, rng)
    t1 = 3.0
    data["moment_k1"] = {
        "h": enc(h), "rho": enc(rho), "kraus": [[enc(k) for k in a1]], "windows": [t1], "d_s": 2,
        "value": oracles.moment_by_dense_quadrature(h, rho, [a1], [t1], 2, 4001),
        "infinite": oracles.infinite_time_moment_bruteforce(h, rho, [a1], 2),
    }

    # k = 2 moment
    h2 = rand_herm(4, rng)
    w = np.linalg.eigvalsh(h2)
    h2 = (h2 - w[0] * np.eye(4)) / (w[-1] - w[0])
    rho2 = rand_state(4, rng, 2)
    b1, b2 = rand_outcome(2, rng), rand_outcome(2, rng)
    wins = [2.0, 1.5]
    data["moment_k2"] = {
        "h": enc(h2), "rho": enc(rho2), "kraus": [[enc(k) for k in b1], [enc(k) for k in b2]],
        "windows": wins, "d_s": 2,
        "value": oracles.moment_by_dense_quadrature(h2, rho2, [b1, b2], wins, 2, 201),
    }

    # single gap: H = diag(0, omega) on a bare qubit, closed form
    omega, t = 0.8, 5.0
    psi = rng.normal(size=2) + 1j * rng.normal(size=2)
    psi /= np.linalg.norm(psi)
    rho1 = np.outer(psi, psi.conj())
    a = rand_outcome(2, rng)
    povm1 = a[0].conj().T @ a[0]
    # <A>(t) - <A>_eq = c e^{i w t} + conj(c) e^{-i w t}, c = povm[1,0] rho[0,1]
    c = povm1[1, 0] * rho1[0, 1]
    x = omega * t
    avg2 = complex(math.sin(2 * x), 1 - math.cos(2 * x)) / (2 * x)  # mean of e^{2iwt}
    closed = 2 * abs(c) ** 2 + 2 * (c * c * avg2).real
    data["single_gap"] = {"omega": omega, "t": t, "rho": enc(rho1), "kraus": [enc(k) for k in a],
                          "value": closed}

    OUT.parent.mkdir(exist_ok=True)
    OUT.write_text(json.dumps(data, indent=1) + "\n")
    print(json.dumps({k: (v.get("value") if isinstance(v, dict) else len(v)) for k, v in data.items()}))


if __name__ == "__main__":
    main()
