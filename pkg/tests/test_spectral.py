import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gap_count_bruteforce
from procequil.errors import ValidationError
from procequil.spectral import (
    Hamiltonian,
    diagonalize,
    gap_census,
    load_hamiltonian,
    mean_positive_gap,
    ordered_gaps,
)


def test_identity_is_one_level():
    s = diagonalize(np.eye(4), degeneracy_tol=1e-9)
    assert s.num_levels == 1
    assert np.allclose(s.eigenvalues, [1.0])
    assert np.allclose(s.projectors[0], np.eye(4))


def test_diagonal_gives_rank_one_projectors():
    s = diagonalize(np.diag([0.0, 1.0, 2.0, 3.0]), degeneracy_tol=1e-9)
    assert s.num_levels == 4
    for n, p in enumerate(s.projectors):
        expected = np.zeros((4, 4))
        expected[n, n] = 1
        assert np.allclose(p, expected)


def test_gue_reconstruction(rng):
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    h = (a + a.conj().T) / 2
    s = diagonalize(h)
    rebuilt = sum(e * p for e, p in zip(s.eigenvalues, s.projectors))
    assert np.abs(rebuilt - h).max() < 1e-9
    assert np.abs(s.matrix() - h).max() < 1e-9


def test_projectors_resolve_identity(rng):
    h = np.kron(np.diag([0.0, 1.0]), np.eye(3)) + 1e-13 * rng.normal(size=(6, 6))
    h = (h + h.T) / 2
    s = diagonalize(h)
    assert s.num_levels == 2
    assert list(s.multiplicities) == [3, 3]
    total = sum(s.projectors)
    assert np.allclose(total, np.eye(6))
    for p in s.projectors:
        assert np.allclose(p @ p, p)


def test_non_hermitian_rejected():
    with pytest.raises(ValidationError):
        Hamiltonian(np.array([[0, 1], [0, 0]], dtype=complex))


def test_hamiltonian_json_round_trip(tmp_path, rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    h = Hamiltonian((a + a.conj().T) / 2)
    path = tmp_path / "h.json"
    path.write_text(json.dumps(h.to_json()))
    back = load_hamiltonian(path)
    assert np.array_equal(back.matrix, h.matrix)


@pytest.mark.parametrize("energies,eps,expected", [
    ([0, 1, 2, 3], 0.5, 3),
    ([0, 1], 0.99, 1),
    ([0, 1, 2], 1.5, 3),
])
def test_gap_census_examples(energies, eps, expected):
    c = gap_census(diagonalize(np.diag(np.array(energies, dtype=float))), eps)
    assert c.n_epsilon == expected


def test_gap_census_two_levels():
    c = gap_census(diagonalize(np.diag([0.0, 1.0])), 0.3)
    assert c.min_gap == pytest.approx(1.0)
    assert c.max_gap_degeneracy == 1
    assert not c.degenerate


def test_gap_census_frozen(frozen):
    for case in frozen["gap_counts"]:
        s = diagonalize(np.diag(np.array(case["energies"], dtype=float)))
        assert gap_census(s, case["eps"]).n_epsilon == case["n"]


def test_repeated_gap_counted():
    c = gap_census(diagonalize(np.diag([0.0, 1.0, 2.0])), 0.01)
    assert c.max_gap_degeneracy == 2
    assert c.n_epsilon >= c.max_gap_degeneracy
    assert not c.degenerate


def test_single_level_census():
    c = gap_census(diagonalize(np.eye(3)), 0.1)
    assert c.n_epsilon == 0
    assert c.num_levels == 1
    assert c.degenerate


def test_epsilon_must_be_positive():
    with pytest.raises(ValidationError):
        gap_census(diagonalize(np.diag([0.0, 1.0])), 0.0)


def test_ordered_gaps_excludes_diagonal():
    g = ordered_gaps(np.array([0.0, 1.0, 3.0]))
    assert sorted(g.tolist()) == [-3, -2, -1, 1, 2, 3]


def test_mean_positive_gap():
    s = diagonalize(np.diag([0.0, 1.0, 3.0]))
    assert mean_positive_gap(s) == pytest.approx(2.0)


energies = st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=12, unique=True)


@settings(max_examples=60, deadline=None)
@given(energies, st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_window_monotone(e, a, b):
    s = diagonalize(np.diag(np.array(e)))
    lo, hi = sorted((a, b))
    assert gap_census(s, lo).n_epsilon <= gap_census(s, hi).n_epsilon


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=2, max_size=12, unique=True), st.integers(1, 30))
def test_census_matches_bruteforce(levels, width):
    # integer grids make window edges exact in floating point
    e = np.array(sorted(levels), dtype=float) / 8.0
    eps = width / 8.0
    s = diagonalize(np.diag(e))
    assert gap_census(s, eps).n_epsilon == gap_count_bruteforce(s.eigenvalues, eps, tol=1e-12)


def test_distinct_gaps_give_one(rng):
    for _ in range(20):
        e = np.sort(rng.uniform(0, 1, size=5))
        gaps = sorted(abs(a - b) for a in e for b in e if a > b)
        spacing = np.diff(gaps).min()
        s = diagonalize(np.diag(e))
        assert gap_census(s, 0.5 * spacing).n_epsilon == 1
